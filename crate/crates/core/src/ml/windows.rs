//! Avoid windows from per-slot busy probabilities.

use chrono::{Duration, NaiveDate};

use super::features::HistoryIndex;
use super::TrainedModel;
use crate::plan::{AvoidWindow, WindowSource};
use crate::time::{clock, midnight, Timestamp, MINUTES_PER_DAY};

pub const DEFAULT_SLOT_MINUTES: u32 = 30;
pub const DEFAULT_TAU: f64 = 0.6;

/// Slots with probability at least `tau` become windows; runs of adjacent qualifying slots
/// merge, with the mean probability of the run as confidence.
pub fn windows_from_slot_probas(
    participant: &str,
    date: NaiveDate,
    probas: &[f64],
    slot_minutes: u32,
    tau: f64,
) -> Vec<AvoidWindow> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < probas.len() {
        if probas[i] < tau {
            i += 1;
            continue;
        }
        let start = i;
        while i < probas.len() && probas[i] >= tau {
            i += 1;
        }
        let run = &probas[start..i];
        let end_minute = (i as u32 * slot_minutes).min(MINUTES_PER_DAY);
        out.push(AvoidWindow {
            participant: participant.to_string(),
            date,
            start: clock(start as u32 * slot_minutes),
            end: clock(end_minute),
            source: WindowSource::Predicted,
            confidence: run.iter().sum::<f64>() / run.len() as f64,
        });
    }
    out
}

/// Busy probability at the midpoint of every slot of `date`, using what is known at `as_of`.
pub fn slot_probas(
    model: &TrainedModel,
    history: &HistoryIndex,
    participant: &str,
    date: NaiveDate,
    as_of: Timestamp,
    slot_minutes: u32,
) -> Vec<f64> {
    let slots = MINUTES_PER_DAY.div_ceil(slot_minutes);
    (0..slots)
        .map(|s| {
            let mid = midnight(date) + Duration::seconds(i64::from(s * slot_minutes) * 60 + i64::from(slot_minutes) * 30);
            model.predict_proba(&history.features_as_of(participant, mid, as_of, &model.schema))
        })
        .collect()
}

pub fn derive_avoid_windows(
    model: &TrainedModel,
    history: &HistoryIndex,
    participant: &str,
    date: NaiveDate,
    as_of: Timestamp,
    slot_minutes: u32,
    tau: f64,
) -> Vec<AvoidWindow> {
    let probas = slot_probas(model, history, participant, date, as_of, slot_minutes);
    windows_from_slot_probas(participant, date, &probas, slot_minutes, tau)
}
