use serde::{Deserialize, Serialize};

use super::ParticipantSummary;
use crate::time::Timestamp;

/// A goal is on track once this fraction of its target is reached.
pub const ON_TRACK_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMetric {
    AnswersPerDay,
    /// Sensor readings taken per sensor task due, capped at 1.
    SensorCoverage,
    /// Mean response delay in minutes; lower is better.
    ResponseDelay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub id: String,
    pub participant: String,
    pub metric: GoalMetric,
    pub target: f64,
    /// Trailing window in days the goal is measured over.
    pub window_days: u32,
    pub created_at: Timestamp,
}

impl Goal {
    pub fn is_valid(&self) -> bool {
        let target_ok = match self.metric {
            GoalMetric::SensorCoverage => self.target > 0.0 && self.target <= 1.0,
            _ => self.target.is_finite() && self.target > 0.0,
        };
        target_ok && self.window_days >= 1 && !self.id.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalProgress {
    pub goal_id: String,
    pub value: f64,
    pub fraction: f64,
    pub on_track: bool,
}

/// Progress of `goal` given the summary of its window.
pub fn goal_progress(goal: &Goal, summary: &ParticipantSummary) -> GoalProgress {
    let n_days = summary.days.len().max(1) as f64;
    let (value, fraction) = match goal.metric {
        GoalMetric::AnswersPerDay => {
            let v = f64::from(summary.answered) / n_days;
            (v, v / goal.target)
        }
        GoalMetric::SensorCoverage => {
            let v = if summary.sensor_tasks == 0 {
                0.0
            } else {
                (f64::from(summary.total_sensor_records()) / f64::from(summary.sensor_tasks)).min(1.0)
            };
            (v, v / goal.target)
        }
        GoalMetric::ResponseDelay => {
            let v = summary.mean_delay_minutes;
            let f = if summary.answered == 0 {
                0.0
            } else if v <= goal.target {
                1.0
            } else {
                goal.target / v
            };
            (v, f)
        }
    };
    let fraction = fraction.clamp(0.0, 1.0);
    GoalProgress { goal_id: goal.id.clone(), value, fraction, on_track: fraction >= ON_TRACK_FRACTION }
}
