//! Dashboard datasets: per-participant progress, comparisons, rankings, alerts and goals.

mod alerts;
mod goals;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use alerts::{evaluate_alert_rules, Alert, AlertConfig, Severity};
pub use goals::{goal_progress, Goal, GoalMetric, GoalProgress, ON_TRACK_FRACTION};

use crate::plan::{ActionState, Schedule, ScheduledAction, TaskKind};
use crate::store::LtmStore;
use crate::time::{days, Timestamp};

/// Weight of one sensor reading relative to one answered question in the contribution score.
pub const SENSOR_CONTRIBUTION_WEIGHT: f64 = 0.01;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DayCounts {
    pub date: NaiveDate,
    /// Questions first delivered on this day.
    pub sent: u32,
    /// Of those, how many were answered and how many expired.
    pub answered: u32,
    pub expired: u32,
    /// Questions skipped on this day.
    pub skipped: u32,
    /// Sensor tasks due on this day.
    pub sensor_tasks: u32,
    /// Sensor readings taken on this day, per sensor kind.
    pub sensor_records: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantSummary {
    pub participant: String,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub days: Vec<DayCounts>,
    pub sent: u32,
    pub answered: u32,
    pub expired: u32,
    pub skipped: u32,
    pub sensor_tasks: u32,
    pub sensor_records: BTreeMap<String, u32>,
    pub mean_delay_minutes: f64,
    pub completion_rate: f64,
}

impl ParticipantSummary {
    pub fn total_sensor_records(&self) -> u32 {
        self.sensor_records.values().sum()
    }

    pub fn contribution(&self) -> f64 {
        f64::from(self.answered) + SENSOR_CONTRIBUTION_WEIGHT * f64::from(self.total_sensor_records())
    }
}

fn answered_at(a: &ScheduledAction) -> Option<Timestamp> {
    match a.state {
        ActionState::Answered { at } => Some(at),
        _ => None,
    }
}

fn skipped_at(a: &ScheduledAction) -> Option<Timestamp> {
    a.history.iter().find(|t| t.state == ActionState::Skipped).map(|t| t.at)
}

/// Counts for `participant` over the dates `[from, to)`.
///
/// Answered and expired questions are attributed to the day they were first delivered, so
/// the completion rate of any range stays within [0, 1].
pub fn summarize(participant: &str, schedule: &Schedule, ltm: &LtmStore, from: NaiveDate, to: NaiveDate) -> ParticipantSummary {
    let mut per_day: BTreeMap<NaiveDate, DayCounts> =
        days(from, to).map(|d| (d, DayCounts { date: d, ..DayCounts::default() })).collect();
    let mut delays = Vec::new();
    for a in schedule.actions_of(participant) {
        if !a.is_question() {
            if let Some(d) = per_day.get_mut(&a.due_time.date_naive()) {
                d.sensor_tasks += 1;
            }
            continue;
        }
        if let Some(first) = a.first_notified() {
            if let Some(d) = per_day.get_mut(&first.date_naive()) {
                d.sent += 1;
                match a.state {
                    ActionState::Answered { at } => {
                        d.answered += 1;
                        let last = a.last_notified().unwrap_or(first);
                        delays.push((at - last).num_seconds() as f64 / 60.0);
                    }
                    ActionState::Expired => d.expired += 1,
                    _ => {}
                }
            }
        }
        if let Some(at) = skipped_at(a) {
            if let Some(d) = per_day.get_mut(&at.date_naive()) {
                d.skipped += 1;
            }
        }
    }
    for (_, batch) in ltm.sensors_of(participant) {
        for r in &batch.readings {
            if let Some(d) = per_day.get_mut(&r.at.date_naive()) {
                *d.sensor_records.entry(r.value.kind().as_str().to_string()).or_default() += 1;
            }
        }
    }
    let days: Vec<DayCounts> = per_day.into_values().collect();
    let mut sensor_records = BTreeMap::new();
    for d in &days {
        for (k, v) in &d.sensor_records {
            *sensor_records.entry(k.clone()).or_default() += v;
        }
    }
    let sent = days.iter().map(|d| d.sent).sum();
    let answered = days.iter().map(|d| d.answered).sum();
    ParticipantSummary {
        participant: participant.to_string(),
        from,
        to,
        sent,
        answered,
        expired: days.iter().map(|d| d.expired).sum(),
        skipped: days.iter().map(|d| d.skipped).sum(),
        sensor_tasks: days.iter().map(|d| d.sensor_tasks).sum(),
        sensor_records,
        mean_delay_minutes: if delays.is_empty() { 0.0 } else { delays.iter().sum::<f64>() / delays.len() as f64 },
        completion_rate: if sent == 0 { 0.0 } else { f64::from(answered) / f64::from(sent) },
        days,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesMetric {
    Answered,
    Sent,
    Expired,
    SensorRecords,
}

impl SeriesMetric {
    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).ok()
    }

    fn of_day(self, d: &DayCounts) -> f64 {
        f64::from(match self {
            SeriesMetric::Answered => d.answered,
            SeriesMetric::Sent => d.sent,
            SeriesMetric::Expired => d.expired,
            SeriesMetric::SensorRecords => d.sensor_records.values().sum(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub participant: String,
    pub values: Vec<f64>,
}

/// Daily series aligned on the day index relative to `from`; days without data are 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: SeriesMetric,
    pub from: NaiveDate,
    pub days: usize,
    pub series: Vec<Series>,
}

pub fn compare(
    participants: &[String],
    metric: SeriesMetric,
    schedule: &Schedule,
    ltm: &LtmStore,
    from: NaiveDate,
    to: NaiveDate,
) -> Comparison {
    let series: Vec<Series> = participants
        .iter()
        .map(|p| {
            let s = summarize(p, schedule, ltm, from, to);
            Series { participant: p.clone(), values: s.days.iter().map(|d| metric.of_day(d)).collect() }
        })
        .collect();
    Comparison { metric, from, days: days(from, to).count(), series }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMetric {
    Contribution,
    Answered,
    SensorRecords,
    CompletionRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankOrder {
    Least,
    Most,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub participant: String,
    pub value: f64,
}

/// Participants ordered by `metric`; ties go to the lower id.
pub fn rank_participants(
    participants: &[String],
    metric: RankMetric,
    order: RankOrder,
    limit: usize,
    schedule: &Schedule,
    ltm: &LtmStore,
    from: NaiveDate,
    to: NaiveDate,
) -> Vec<RankEntry> {
    let mut entries: Vec<RankEntry> = participants
        .iter()
        .map(|p| {
            let s = summarize(p, schedule, ltm, from, to);
            let value = match metric {
                RankMetric::Contribution => s.contribution(),
                RankMetric::Answered => f64::from(s.answered),
                RankMetric::SensorRecords => f64::from(s.total_sensor_records()),
                RankMetric::CompletionRate => s.completion_rate,
            };
            RankEntry { participant: p.clone(), value }
        })
        .collect();
    entries.sort_by(|a, b| {
        let by_value = a.value.total_cmp(&b.value);
        let by_value = if order == RankOrder::Most { by_value.reverse() } else { by_value };
        by_value.then_with(|| a.participant.cmp(&b.participant))
    });
    entries.truncate(limit);
    entries
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayPoint {
    pub action_id: String,
    pub notified_at: Timestamp,
    pub delay_minutes: f64,
    pub mood: Option<String>,
    pub location: Option<String>,
    pub activity: Option<String>,
}

/// Response delays joined with the context reported in each answer.
pub fn delay_series(participant: &str, schedule: &Schedule, ltm: &LtmStore) -> Vec<DelayPoint> {
    let mut out: Vec<DelayPoint> = ltm
        .answers_of(participant)
        .filter(|r| schedule.actions.contains_key(&r.action_id))
        .map(|r| DelayPoint {
            action_id: r.action_id.clone(),
            notified_at: r.notification_time,
            delay_minutes: (r.answer_time - r.notification_time).num_seconds() as f64 / 60.0,
            mood: r.answers.mood.clone(),
            location: r.answers.location.clone(),
            activity: r.answers.what.clone(),
        })
        .collect();
    out.sort_by(|a, b| a.notified_at.cmp(&b.notified_at).then_with(|| a.action_id.cmp(&b.action_id)));
    out
}

fn is_geo_task(a: &ScheduledAction) -> bool {
    matches!(a.kind, TaskKind::Sensor { sensor: crate::context::SensorKind::Geo })
}

fn answered_times(schedule: &Schedule, participant: &str) -> Vec<Timestamp> {
    let mut v: Vec<Timestamp> = schedule.actions_of(participant).filter_map(answered_at).collect();
    v.sort();
    v
}
