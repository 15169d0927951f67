import init, { expandPlan, participantWindows, evaluate, syntheticScores, demoPlan } from "./pkg/bigthick_wasm.js";

const $ = (id) => document.getElementById(id);
const SVG = "http://www.w3.org/2000/svg";

function el(tag, attrs, parent) {
  const node = document.createElementNS(SVG, tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (parent) parent.appendChild(node);
  return node;
}

function guarded(errorId, fn) {
  return () => {
    $(errorId).textContent = "";
    try {
      fn();
    } catch (e) {
      $(errorId).textContent = String(e.message ?? e);
    }
  };
}

const hhmm = (iso) => iso.slice(11, 16);

function defaultWindows() {
  return JSON.stringify([
    { participant: "P1", date: "2024-03-04", start: "09:00:00", end: "11:00:00", source: "predicted", confidence: 0.8 },
    { participant: "P1", date: "2024-03-05", start: "14:00:00", end: "15:30:00", source: "declared", confidence: 1.0 },
  ], null, 2);
}

function runExpand() {
  const out = JSON.parse(expandPlan($("plan").value, $("windows").value, Number($("threshold").value)));
  const questions = out.actions.filter((a) => a.question);
  const moved = questions.filter((a) => a.displaced_minutes > 0);
  $("expand-summary").textContent =
    `${out.actions.length} actions, ${questions.length} questions, ${moved.length} moved, ` +
    `${out.diagnostics.length} diagnostics, ${out.violations.length} constraint violations`;
  const rows = out.actions.map((a) =>
    `<tr><td>${a.nominal.slice(0, 10)}</td><td>${a.template}</td><td>${hhmm(a.nominal)}</td><td>${hhmm(a.due)}</td>` +
    `<td>${a.displaced_minutes || ""}</td></tr>`);
  $("expand-table").innerHTML =
    "<tr><th>date</th><th>template</th><th>nominal</th><th>due</th><th>moved (min)</th></tr>" + rows.join("");
}

function runWindows() {
  $("w-tau-value").textContent = $("w-tau").value;
  const out = JSON.parse(participantWindows(
    Number($("w-seed").value), Number($("w-index").value), Number($("w-weekday").value),
    Number($("w-weeks").value), Number($("w-tau").value), Number($("w-slot").value)));
  const busy = (list) => list.filter((q) => q.busy).length;
  $("windows-summary").textContent =
    `${out.participant} on ${out.date}: ${out.windows.length} windows; questions in busy time ` +
    `${busy(out.fixed)}/${out.fixed.length} fixed vs ${busy(out.adaptive)}/${out.adaptive.length} adaptive`;

  const svg = $("timeline");
  svg.replaceChildren();
  const x = (minute) => 40 + (minute / 1440) * 900;
  const minutes = (t) => { const [h, m] = t.split(":").map(Number); return h * 60 + m; };
  for (let h = 0; h <= 24; h += 3) {
    el("line", { x1: x(h * 60), x2: x(h * 60), y1: 10, y2: 160, stroke: "#ddd" }, svg);
    el("text", { x: x(h * 60), y: 180, "font-size": 11, "text-anchor": "middle" }, svg).textContent = `${h}:00`;
  }
  for (const e of out.truth.filter((e) => e.busy)) {
    el("rect", { x: x(e.start), y: 20, width: x(e.end) - x(e.start), height: 22, fill: "#f4a261" }, svg)
      .appendChild(el("title", {})).textContent = e.activity;
  }
  const slot = out.slot_minutes;
  out.probabilities.forEach((p, i) => {
    const h = p * 60;
    el("rect", { x: x(i * slot), y: 110 - h, width: x(slot) - x(0) - 1, height: h, fill: "#2a9d8f" }, svg);
  });
  for (const w of out.windows) {
    const end = w.end === "00:00:00" ? 1440 : minutes(w.end);
    el("rect", { x: x(minutes(w.start)), y: 10, width: x(end) - x(minutes(w.start)), height: 150, fill: "#e76f51", opacity: 0.2 }, svg);
  }
  const dots = (list, y, label) => {
    el("text", { x: 2, y: y + 4, "font-size": 11 }, svg).textContent = label;
    for (const q of list) el("circle", { cx: x(minutes(q.due)), cy: y, r: 4, fill: q.busy ? "#c1121f" : "#264653" }, svg);
  };
  dots(out.fixed, 128, "fixed");
  dots(out.adaptive, 148, "adapt");
}

let dataset = null;

function regenerate() {
  $("m-sep-value").textContent = $("m-sep").value;
  dataset = JSON.parse(syntheticScores(
    Number($("m-n").value), Number($("m-share").value), Number($("m-sep").value), Number($("m-seed").value)));
  runMetrics();
}

function runMetrics() {
  $("m-threshold-value").textContent = $("m-threshold").value;
  const out = JSON.parse(evaluate(JSON.stringify(dataset.scores), JSON.stringify(dataset.labels), Number($("m-threshold").value)));
  const m = out.metrics;
  const fmt = (v) => (typeof v === "number" ? v.toFixed(3) : v);
  $("metrics-table").innerHTML = Object.entries(m).map(([k, v]) => `<tr><th>${k}</th><td>${fmt(v)}</td></tr>`).join("");

  const svg = $("roc");
  svg.replaceChildren();
  const px = (v) => 30 + v * 260;
  const py = (v) => 270 - v * 260;
  el("rect", { x: 30, y: 10, width: 260, height: 260, fill: "none", stroke: "#ccc" }, svg);
  el("line", { x1: px(0), y1: py(0), x2: px(1), y2: py(1), stroke: "#ccc", "stroke-dasharray": "4 4" }, svg);
  el("polyline", { points: out.roc.map((p) => `${px(p.fpr)},${py(p.tpr)}`).join(" "), fill: "none", stroke: "#264653", "stroke-width": 2 }, svg);
  const t = Number($("m-threshold").value);
  const at = out.roc.filter((p) => p.threshold >= t).pop();
  if (at) el("circle", { cx: px(at.fpr), cy: py(at.tpr), r: 5, fill: "#e76f51" }, svg);
  el("text", { x: 160, y: 295, "font-size": 11, "text-anchor": "middle" }, svg).textContent = "false positive rate";
  el("text", { x: 10, y: 140, "font-size": 11, transform: "rotate(-90 10 140)", "text-anchor": "middle" }, svg).textContent = "true positive rate";
}

await init();
$("plan").value = demoPlan();
$("windows").value = defaultWindows();

const expand = guarded("expand-error", runExpand);
$("run-expand").addEventListener("click", expand);

const windows = guarded("windows-error", runWindows);
for (const id of ["w-seed", "w-index", "w-weekday", "w-weeks", "w-tau", "w-slot"]) $(id).addEventListener("input", windows);

const metricsData = guarded("metrics-error", regenerate);
const metricsThreshold = guarded("metrics-error", runMetrics);
for (const id of ["m-n", "m-share", "m-sep", "m-seed"]) $(id).addEventListener("input", metricsData);
$("m-threshold").addEventListener("input", metricsThreshold);

expand();
windows();
metricsData();
