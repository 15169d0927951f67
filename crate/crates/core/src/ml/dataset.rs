//! Labeled examples from the stores and the chronological train/test split.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::features::{FeatureSchema, HistoryIndex};
use crate::plan::{ReplanOp, Schedule};
use crate::store::LtmStore;
use crate::time::Timestamp;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub participant: String,
    pub at: Timestamp,
    pub features: Vec<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// The earliest share of each participant's examples trains, the rest tests.
    #[default]
    PerParticipant,
    /// One cut in time across the whole cohort.
    Pooled,
}

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

/// Split without shuffling across time.
pub fn chronological_split(
    examples: &[LabeledExample],
    train_fraction: f64,
    mode: SplitMode,
) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let cut = |n: usize| ((n as f64) * train_fraction).floor() as usize;
    let by_time = |v: &mut Vec<LabeledExample>| v.sort_by(|a, b| a.at.cmp(&b.at).then_with(|| a.participant.cmp(&b.participant)));
    match mode {
        SplitMode::Pooled => {
            let mut all = examples.to_vec();
            by_time(&mut all);
            let test = all.split_off(cut(all.len()));
            (all, test)
        }
        SplitMode::PerParticipant => {
            let mut groups: BTreeMap<&str, Vec<LabeledExample>> = BTreeMap::new();
            for e in examples {
                groups.entry(&e.participant).or_default().push(e.clone());
            }
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (_, mut g) in groups {
                by_time(&mut g);
                let rest = g.split_off(cut(g.len()));
                train.extend(g);
                test.extend(rest);
            }
            by_time(&mut train);
            by_time(&mut test);
            (train, test)
        }
    }
}

/// Training examples available to the live system: every answered question labeled from its
/// reported activity, plus every snoozed delivery as a busy example. Features are those
/// observable at the delivery instant. Only data up to `until` is used when given.
pub fn examples_from_stores(
    history: &HistoryIndex,
    schedule: &Schedule,
    ltm: &LtmStore,
    vocab: &Vocabulary,
    schema: &FeatureSchema,
    until: Option<Timestamp>,
) -> Vec<LabeledExample> {
    let visible = |t: Timestamp| until.is_none_or(|u| t <= u);
    let mut out = Vec::new();
    for r in ltm.records() {
        let crate::store::LtmPayload::Answer(a) = &r.payload else { continue };
        let Some(label) = a.answers.what.as_deref().and_then(|w| vocab.encode_label(w).ok()) else { continue };
        if !visible(a.answer_time) {
            continue;
        }
        out.push(LabeledExample {
            participant: a.participant.clone(),
            at: a.notification_time,
            features: history.extract_features(&a.participant, a.notification_time, schema),
            label,
        });
    }
    for e in &schedule.replans {
        let r = &e.request;
        if matches!(r.op, ReplanOp::Snooze { .. }) && e.state_before == "notified" && visible(r.requested_at) {
            out.push(LabeledExample {
                participant: r.participant.clone(),
                at: r.requested_at,
                features: history.extract_features(&r.participant, r.requested_at, schema),
                label: 1,
            });
        }
    }
    out.sort_by(|a, b| a.at.cmp(&b.at).then_with(|| a.participant.cmp(&b.participant)));
    out
}
