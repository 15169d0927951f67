//! Binary classification metrics.

use serde::{Deserialize, Serialize};

use super::MlError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_predictions(predicted: impl IntoIterator<Item = bool>, labels: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (p, y) in predicted.into_iter().zip(labels) {
            match (p, *y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, in the integer form `2TP / (2TP + FP + FN)`.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// Cohen's kappa, `(p_o - p_e) / (1 - p_e)`, evaluated over integers as
    /// `(N (TP + TN) - S) / (N^2 - S)` with `S` the sum of marginal products. 0 when `p_e = 1`.
    pub fn kappa(&self) -> f64 {
        let (tp, fp, fn_, tn) = (self.tp as i128, self.fp as i128, self.fn_ as i128, self.tn as i128);
        let n = tp + fp + fn_ + tn;
        let s = (tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn);
        let den = n * n - s;
        if den == 0 {
            0.0
        } else {
            (n * (tp + tn) - s) as f64 / den as f64
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Area under the ROC curve by the rank-sum formula with mid-ranks for ties. Ranks are kept
/// doubled so the numerator stays an integer. 0.5 when either class is absent.
pub fn auc(scores: &[f64], labels: &[u8]) -> f64 {
    let n1 = labels.iter().filter(|y| **y == 1).count() as u64;
    let n0 = labels.len() as u64 - n1;
    if n1 == 0 || n0 == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut doubled_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let doubled = (i + j + 2) as u64;
        let positives = order[i..=j].iter().filter(|k| labels[**k] == 1).count() as u64;
        doubled_rank_sum += doubled * positives;
        i = j + 1;
    }
    (doubled_rank_sum - n1 * (n1 + 1)) as f64 / (2 * n1 * n0) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from (0, 0) to (1, 1), one point per distinct score taken as a threshold in
/// descending order. Empty when either class is absent.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Vec<RocPoint> {
    let n1 = labels.iter().filter(|y| **y == 1).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, k) in order.iter().enumerate() {
        if labels[*k] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(i + 1).is_none_or(|next| scores[*next] != scores[*k]);
        if last_of_tie {
            points.push(RocPoint { threshold: scores[*k], fpr: fp as f64 / n0 as f64, tpr: tp as f64 / n1 as f64 });
        }
    }
    points
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub kappa: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub n: u64,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Metrics of `scores` against `labels`; a score at or above `threshold` predicts 1.
pub fn evaluate_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalMetrics, MlError> {
    if scores.is_empty() {
        return Err(MlError::EmptyData);
    }
    if scores.len() != labels.len() {
        return Err(MlError::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let c = Confusion::from_predictions(scores.iter().map(|s| *s >= threshold), labels);
    Ok(EvalMetrics {
        accuracy: c.accuracy(),
        kappa: c.kappa(),
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        auc: auc(scores, labels),
        n: c.total(),
    })
}
