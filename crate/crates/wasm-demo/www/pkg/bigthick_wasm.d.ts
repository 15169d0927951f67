/* tslint:disable */
/* eslint-disable */

export function demoPlan(): string;

export function evaluate(scores: string, labels: string, threshold: number): string;

export function expandPlan(plan: string, windows: string, confidence_threshold: number): string;

export function participantWindows(seed: number, index: number, weekday: number, weeks: number, tau: number, slot_minutes: number): string;

export function syntheticScores(n: number, positive_share: number, separation: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly demoPlan: () => [number, number];
    readonly evaluate: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly expandPlan: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly participantWindows: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly syntheticScores: (a: number, b: number, c: number, d: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
