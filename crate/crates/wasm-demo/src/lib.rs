//! Browser bindings for three parameter-explorable views: plan expansion around avoid
//! windows, avoid windows of a synthetic participant, and classifier metrics with ROC.
//!
//! Every export takes and returns JSON strings; the plain `*_json` functions are the same
//! operations for native callers and tests.

use bigthick_core::ml::{evaluate_scores, roc_curve, windows_from_slot_probas};
use bigthick_core::plan::{check_expansion, expand_plan, AvoidWindow, ExpandOptions, ExperimentPlan};
use bigthick_core::sim::{day_plan, demo_plan, generate_profile, CohortConfig};
use chrono::{Datelike, Duration, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn parse<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T, String> {
    serde_json::from_str(s).map_err(|e| format!("{what}: {e}"))
}

/// Expand `plan` for one participant around `windows` and run the constraint verifier.
pub fn expand_json(plan: &str, windows: &str, confidence_threshold: f64) -> Result<String, String> {
    let plan: ExperimentPlan = parse("plan", plan)?;
    let windows: Vec<AvoidWindow> = if windows.trim().is_empty() { Vec::new() } else { parse("windows", windows)? };
    let options = ExpandOptions { confidence_threshold };
    let participant = windows.first().map(|w| w.participant.clone()).unwrap_or_else(|| "P1".into());
    let e = expand_plan(&plan, &participant, &windows, options).map_err(|e| e.to_string())?;
    let violations = check_expansion(&plan, &participant, &windows, confidence_threshold, &e.actions);
    let actions: Vec<Value> = e
        .actions
        .iter()
        .map(|a| {
            json!({
                "id": a.id, "template": a.template_id, "question": a.is_question(),
                "nominal": a.nominal_time, "due": a.due_time,
                "displaced_minutes": (a.due_time - a.nominal_time).num_minutes(),
            })
        })
        .collect();
    Ok(json!({ "actions": actions, "diagnostics": e.diagnostics, "violations": violations }).to_string())
}

/// Avoid windows for participant `index` of the seeded cohort on `weekday` (0 = Monday).
/// Slot probabilities are the participant's busy frequency in that slot over `weeks` past
/// weeks; the diary plan for the target day is then expanded around the windows.
pub fn participant_windows_json(seed: u64, index: u32, weekday: u32, weeks: u32, tau: f64, slot_minutes: u32) -> Result<String, String> {
    if !(1..=240).contains(&slot_minutes) || 1440 % slot_minutes != 0 {
        return Err("slot_minutes must divide a day and be at most 240".into());
    }
    if weekday > 6 || weeks == 0 {
        return Err("weekday must be 0..=6 and weeks at least 1".into());
    }
    let cohort = CohortConfig { seed, ..CohortConfig::default() };
    let profile = generate_profile(&cohort, index as usize);
    let first = cohort.start + Duration::days(i64::from(weekday));
    let slots = (1440 / slot_minutes) as usize;
    let mut busy = vec![0u32; slots];
    for w in 0..weeks {
        let day = day_plan(&cohort, index as usize, &profile, first + Duration::weeks(i64::from(w)));
        for (s, count) in busy.iter_mut().enumerate() {
            let start = s as u32 * slot_minutes;
            let covered = (start..start + slot_minutes).filter(|m| day.at_minute(*m).busy()).count() as u32;
            // a slot counts as busy when at least half of it is
            *count += u32::from(2 * covered >= slot_minutes);
        }
    }
    let probas: Vec<f64> = busy.iter().map(|b| f64::from(*b) / f64::from(weeks)).collect();
    let target = first + Duration::weeks(i64::from(weeks));
    let windows = windows_from_slot_probas(&profile.id, target, &probas, slot_minutes, tau);
    let truth = day_plan(&cohort, index as usize, &profile, target);

    let plan = demo_plan(target, 1);
    let options = ExpandOptions::default();
    let fixed = expand_plan(&plan, &profile.id, &[], options).map_err(|e| e.to_string())?;
    let adaptive = expand_plan(&plan, &profile.id, &windows, options).map_err(|e| e.to_string())?;
    let questions = |e: &bigthick_core::plan::Expansion| -> Vec<Value> {
        e.actions
            .iter()
            .filter(|a| a.is_question())
            .map(|a| {
                let m = a.due_time.time().num_seconds_from_midnight() / 60;
                json!({ "due": a.due_time.time(), "busy": truth.at_minute(m).busy() })
            })
            .collect()
    };
    Ok(json!({
        "participant": profile.id,
        "date": target,
        "weekday": target.weekday().num_days_from_monday(),
        "slot_minutes": slot_minutes,
        "probabilities": probas,
        "windows": windows,
        "truth": truth.episodes.iter().map(|e| json!({
            "start": e.start_minute, "end": e.end_minute, "activity": e.activity, "busy": e.busy(),
        })).collect::<Vec<_>>(),
        "fixed": questions(&fixed),
        "adaptive": questions(&adaptive),
    })
    .to_string())
}

/// Metrics at `threshold` plus the ROC curve.
pub fn evaluate_json(scores: &str, labels: &str, threshold: f64) -> Result<String, String> {
    let scores: Vec<f64> = parse("scores", scores)?;
    let labels: Vec<u8> = parse("labels", labels)?;
    let metrics = evaluate_scores(&scores, &labels, threshold).map_err(|e| e.to_string())?;
    Ok(json!({ "metrics": metrics, "roc": roc_curve(&scores, &labels) }).to_string())
}

/// Scores from two overlapping bell-shaped distributions; `separation` shifts the positive
/// class upwards.
pub fn synthetic_scores_json(n: u32, positive_share: f64, separation: f64, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(n as usize);
    let mut labels = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let y = u8::from(rng.gen_bool(positive_share.clamp(0.0, 1.0)));
        let noise = (rng.gen::<f64>() + rng.gen::<f64>() + rng.gen::<f64>()) / 3.0;
        let s = (noise + if y == 1 { separation } else { 0.0 }) / (1.0 + separation.max(0.0));
        scores.push((s * 1000.0).round() / 1000.0);
        labels.push(y);
    }
    json!({ "scores": scores, "labels": labels }).to_string()
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = expandPlan)]
pub fn expand_plan_js(plan: &str, windows: &str, confidence_threshold: f64) -> Result<String, JsError> {
    js(expand_json(plan, windows, confidence_threshold))
}

#[wasm_bindgen(js_name = participantWindows)]
pub fn participant_windows_js(seed: u32, index: u32, weekday: u32, weeks: u32, tau: f64, slot_minutes: u32) -> Result<String, JsError> {
    js(participant_windows_json(u64::from(seed), index, weekday, weeks, tau, slot_minutes))
}

#[wasm_bindgen(js_name = evaluate)]
pub fn evaluate_js(scores: &str, labels: &str, threshold: f64) -> Result<String, JsError> {
    js(evaluate_json(scores, labels, threshold))
}

#[wasm_bindgen(js_name = syntheticScores)]
pub fn synthetic_scores_js(n: u32, positive_share: f64, separation: f64, seed: u32) -> String {
    synthetic_scores_json(n, positive_share, separation, u64::from(seed))
}

#[wasm_bindgen(js_name = demoPlan)]
pub fn demo_plan_js() -> String {
    let cohort = CohortConfig::default();
    serde_json::to_string_pretty(&demo_plan(cohort.start, 3)).expect("serializable")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expansion_round_trip_has_no_violations() {
        let out: Value = serde_json::from_str(&expand_json(&demo_plan_js(), "", 0.6).unwrap()).unwrap();
        assert_eq!(out["violations"].as_array().unwrap().len(), 0);
        let questions = out["actions"].as_array().unwrap().iter().filter(|a| a["question"] == true).count();
        assert_eq!(questions, 27);
    }

    #[test]
    fn windows_move_questions_out_of_class() {
        let out: Value = serde_json::from_str(&participant_windows_json(20_240_304, 0, 1, 3, 0.6, 30).unwrap()).unwrap();
        assert_eq!(out["probabilities"].as_array().unwrap().len(), 48);
        let busy = |k: &str| out[k].as_array().unwrap().iter().filter(|q| q["busy"] == true).count();
        assert!(busy("adaptive") <= busy("fixed"), "{out}");
        let truth = out["truth"].as_array().unwrap();
        assert_eq!(truth.first().unwrap()["start"], 0);
        assert_eq!(truth.last().unwrap()["end"], 1440);
        assert!(participant_windows_json(1, 0, 9, 3, 0.6, 30).is_err());
        assert!(participant_windows_json(1, 0, 1, 3, 0.6, 7).is_err());
    }

    #[test]
    fn evaluation_matches_core() {
        let data: Value = serde_json::from_str(&synthetic_scores_json(200, 0.3, 0.5, 4)).unwrap();
        let out: Value =
            serde_json::from_str(&evaluate_json(&data["scores"].to_string(), &data["labels"].to_string(), 0.5).unwrap()).unwrap();
        let auc = out["metrics"]["auc"].as_f64().unwrap();
        assert!(auc > 0.7, "{auc}");
        let roc = out["roc"].as_array().unwrap();
        assert_eq!(roc.last().unwrap()["fpr"], 1.0);
        assert!(evaluate_json("[0.1]", "[1, 0]", 0.5).is_err());
    }
}
