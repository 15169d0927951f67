//! Experiment plans, their expansion into per-participant scheduled actions, and the action
//! delivery state machine.

mod expand;
mod schedule;
mod verify;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expand::{expand_plan, Diagnostic, DropReason, ExpandOptions, Expansion, DEFAULT_CONFIDENCE_THRESHOLD};
pub use schedule::{
    ExecutionOutcome, OutcomeKind, ReplanEvent, ReplanOp, ReplanRequest, Schedule, SweepEvent,
};
pub use verify::{check_expansion, Violation};

use crate::context::SensorKind;
use crate::time::{time_minutes, DailyInterval, Timestamp, MINUTES_PER_DAY};

pub const PLAN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("unknown action {0}")]
    UnknownAction(String),
    #[error("unknown plan {0}")]
    UnknownPlan(String),
    #[error("action {action} belongs to another participant")]
    WrongParticipant { action: String },
    #[error("action {action} already settled as {state}")]
    AlreadySettled { action: String, state: String },
    #[error("illegal transition {from} -> {to} for action {action}")]
    IllegalTransition { action: String, from: String, to: String },
    #[error("transition at {at} precedes the previous one at {last}")]
    NonMonotonic { at: Timestamp, last: Timestamp },
    #[error("move would violate the minimum gap with action {conflicting}")]
    GapConflict { conflicting: String },
    #[error("move target {0} is outside the plan dates")]
    OutsidePlan(Timestamp),
    #[error("snooze must be between 1 and 1440 minutes, got {0}")]
    InvalidSnooze(u32),
    #[error("answer at {at} is past the validity window ending {deadline}")]
    PastDeadline { at: Timestamp, deadline: Timestamp },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    What,
    Where,
    Mood,
    Objects,
    Who,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Question { question: QuestionKind },
    Sensor { sensor: SensorKind },
}

impl TaskKind {
    pub fn is_question(&self) -> bool {
        matches!(self, TaskKind::Question { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Recurrence {
    /// Every `minutes` starting at midnight, each day.
    Every { minutes: u32 },
    /// At fixed clock times each day.
    Daily { times: Vec<NaiveTime> },
}

impl Recurrence {
    /// Minutes after midnight of each occurrence in one day, ascending and distinct.
    pub fn minutes_of_day(&self) -> Vec<u32> {
        match self {
            Recurrence::Every { minutes } => (0..MINUTES_PER_DAY).step_by((*minutes).max(1) as usize).collect(),
            Recurrence::Daily { times } => {
                let mut m: Vec<u32> = times.iter().map(|t| time_minutes(*t)).collect();
                m.sort_unstable();
                m.dedup();
                m
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub id: String,
    #[serde(flatten)]
    pub kind: TaskKind,
    pub recurrence: Recurrence,
    pub validity_minutes: u32,
    #[serde(default)]
    pub priority: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanConstraints {
    #[serde(default)]
    pub min_gap_minutes: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quiet_hours: Option<DailyInterval>,
    pub max_daily_questions: u32,
}

/// A researcher's declarative plan. `end` is exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    #[serde(default = "plan_format_version")]
    pub format_version: u32,
    pub id: String,
    pub researcher: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub templates: Vec<TaskTemplate>,
    pub constraints: PlanConstraints,
}

fn plan_format_version() -> u32 {
    PLAN_FORMAT_VERSION
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: String| Err(PlanError::InvalidPlan(m));
        if self.format_version != PLAN_FORMAT_VERSION {
            return bad(format!("unsupported format_version {}", self.format_version));
        }
        if self.id.trim().is_empty() {
            return bad("plan id is empty".into());
        }
        if self.start >= self.end {
            return bad(format!("start {} is not before end {}", self.start, self.end));
        }
        let mut ids = std::collections::BTreeSet::new();
        for t in &self.templates {
            if !ids.insert(t.id.as_str()) {
                return bad(format!("duplicate template id {}", t.id));
            }
            if let Recurrence::Every { minutes: 0 } = t.recurrence {
                return bad(format!("template {} recurs every 0 minutes", t.id));
            }
            if let Recurrence::Daily { times } = &t.recurrence {
                if times.is_empty() {
                    return bad(format!("template {} has no daily times", t.id));
                }
            }
            if t.validity_minutes == 0 {
                return bad(format!("template {} has an empty validity window", t.id));
            }
        }
        Ok(())
    }

    pub fn contains_date(&self, date: NaiveDate) -> bool {
        date >= self.start && date < self.end
    }

    pub fn template(&self, id: &str) -> Option<&TaskTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSource {
    Predicted,
    Declared,
}

/// A daily interval during which questions should not be delivered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvoidWindow {
    pub participant: String,
    pub date: NaiveDate,
    pub start: NaiveTime,
    /// Exclusive; `00:00` denotes the end of the day.
    pub end: NaiveTime,
    pub source: WindowSource,
    pub confidence: f64,
}

impl AvoidWindow {
    pub fn start_minute(&self) -> u32 {
        time_minutes(self.start)
    }

    pub fn end_minute(&self) -> u32 {
        match time_minutes(self.end) {
            0 => MINUTES_PER_DAY,
            m => m,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.start_minute() < self.end_minute() && (0.0..=1.0).contains(&self.confidence)
    }

    pub fn contains_minute(&self, minute: u32) -> bool {
        minute >= self.start_minute() && minute < self.end_minute()
    }

    pub fn honored(&self, threshold: f64) -> bool {
        self.source == WindowSource::Declared || self.confidence >= threshold
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ActionState {
    Pending,
    Notified { at: Timestamp },
    Answered { at: Timestamp },
    Expired,
    Skipped,
    Snoozed { until: Timestamp },
}

impl ActionState {
    pub fn name(&self) -> &'static str {
        match self {
            ActionState::Pending => "pending",
            ActionState::Notified { .. } => "notified",
            ActionState::Answered { .. } => "answered",
            ActionState::Expired => "expired",
            ActionState::Skipped => "skipped",
            ActionState::Snoozed { .. } => "snoozed",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, ActionState::Answered { .. } | ActionState::Expired | ActionState::Skipped)
    }

    /// Whether the delivery state machine permits `self -> to`.
    pub fn can_transition_to(&self, to: &ActionState) -> bool {
        use ActionState::*;
        matches!(
            (self, to),
            (Pending, Notified { .. })
                | (Pending, Snoozed { .. })
                | (Pending, Skipped)
                | (Snoozed { .. }, Pending)
                | (Notified { .. }, Answered { .. })
                | (Notified { .. }, Expired)
                | (Notified { .. }, Snoozed { .. })
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub at: Timestamp,
    pub state: ActionState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledAction {
    pub id: String,
    pub plan_id: String,
    pub participant: String,
    pub template_id: String,
    #[serde(flatten)]
    pub kind: TaskKind,
    pub priority: i32,
    pub validity_minutes: u32,
    /// The occurrence time before any displacement; part of the id.
    pub nominal_time: Timestamp,
    pub due_time: Timestamp,
    pub state: ActionState,
    #[serde(default)]
    pub history: Vec<Transition>,
}

impl ScheduledAction {
    pub fn deadline(&self) -> Timestamp {
        self.due_time + chrono::Duration::minutes(i64::from(self.validity_minutes))
    }

    pub fn is_question(&self) -> bool {
        self.kind.is_question()
    }

    /// Time of the most recent delivery.
    pub fn last_notified(&self) -> Option<Timestamp> {
        self.history.iter().rev().find_map(|t| match t.state {
            ActionState::Notified { at } => Some(at),
            _ => None,
        })
    }

    pub fn first_notified(&self) -> Option<Timestamp> {
        self.history.iter().find_map(|t| match t.state {
            ActionState::Notified { at } => Some(at),
            _ => None,
        })
    }

    /// Apply one state-machine step. Rejects illegal transitions and timestamps that go
    /// backwards. `Snoozed -> Pending` moves the due time to the snooze end.
    pub fn transition(&mut self, to: ActionState, at: Timestamp) -> Result<(), PlanError> {
        self.check_transition(&to, at)?;
        if let ActionState::Snoozed { until } = &to {
            self.due_time = *until;
        }
        self.history.push(Transition { at, state: to.clone() });
        self.state = to;
        Ok(())
    }

    pub fn check_transition(&self, to: &ActionState, at: Timestamp) -> Result<(), PlanError> {
        if self.state.is_terminal() {
            return Err(PlanError::AlreadySettled { action: self.id.clone(), state: self.state.name().into() });
        }
        if !self.state.can_transition_to(to) {
            return Err(PlanError::IllegalTransition {
                action: self.id.clone(),
                from: self.state.name().into(),
                to: to.name().into(),
            });
        }
        if let Some(last) = self.history.last() {
            if at < last.at {
                return Err(PlanError::NonMonotonic { at, last: last.at });
            }
        }
        Ok(())
    }
}

/// Deterministic action id: plan, participant, template and nominal occurrence time.
pub fn action_id(plan: &str, participant: &str, template: &str, nominal: &Timestamp) -> String {
    format!("{plan}:{participant}:{template}:{}", nominal.format("%Y%m%dT%H%M"))
}

#[cfg(test)]
mod tests;
