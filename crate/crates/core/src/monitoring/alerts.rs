use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{answered_times, is_geo_task};
use crate::context::SensorKind;
use crate::ids::derived_id;
use crate::plan::{ActionState, Schedule};
use crate::store::LtmStore;
use crate::time::{midnight, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub id: String,
    pub severity: Severity,
    pub participant: Option<String>,
    pub rule: String,
    pub message: String,
    pub raised_at: Timestamp,
    pub resolved_at: Option<Timestamp>,
}

impl Alert {
    pub fn is_open(&self) -> bool {
        self.resolved_at.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlertConfig {
    pub sensor_cadence_minutes: u32,
    pub sensor_gap_factor: f64,
    pub drought_hours: u32,
    pub drought_min_notifications: usize,
    pub expiry_ratio: f64,
    pub expiry_min_sent: u32,
}

impl Default for AlertConfig {
    fn default() -> Self {
        Self {
            sensor_cadence_minutes: 15,
            sensor_gap_factor: 2.0,
            drought_hours: 24,
            drought_min_notifications: 3,
            expiry_ratio: 0.5,
            expiry_min_sent: 2,
        }
    }
}

pub const RULE_SENSOR_GAP: &str = "sensor_gap";
pub const RULE_RESPONSE_DROUGHT: &str = "response_drought";
pub const RULE_EXPIRY_SPIKE: &str = "expiry_spike";
pub const RULE_INCONSISTENT_RECORD: &str = "inconsistent_record";

fn alert(
    severity: Severity,
    participant: &str,
    rule: &str,
    anchor: &str,
    message: String,
    raised_at: Timestamp,
    resolved_at: Option<Timestamp>,
) -> Alert {
    Alert {
        id: derived_id("alert-", &[rule, participant, anchor]),
        severity,
        participant: Some(participant.to_string()),
        rule: rule.to_string(),
        message,
        raised_at,
        resolved_at,
    }
}

/// Evaluate every built-in rule against the stores as of `now`. The result depends only on
/// the inputs; an episode keeps its id for as long as it lasts.
pub fn evaluate_alert_rules(schedule: &Schedule, ltm: &LtmStore, now: Timestamp, cfg: &AlertConfig) -> Vec<Alert> {
    let mut participants: Vec<&str> = schedule.actions.values().map(|a| a.participant.as_str()).collect();
    participants.extend(ltm.participants());
    participants.sort();
    participants.dedup();
    let mut out = Vec::new();
    for p in participants {
        sensor_gaps(p, schedule, ltm, now, cfg, &mut out);
        droughts(p, schedule, now, cfg, &mut out);
        expiry_spikes(p, schedule, now, cfg, &mut out);
        inconsistent(p, schedule, ltm, &mut out);
    }
    out.sort_by(|a, b| a.raised_at.cmp(&b.raised_at).then_with(|| a.id.cmp(&b.id)));
    out
}

fn sensor_gaps(p: &str, schedule: &Schedule, ltm: &LtmStore, now: Timestamp, cfg: &AlertConfig, out: &mut Vec<Alert>) {
    let mut dues: Vec<Timestamp> = schedule.actions_of(p).filter(|a| is_geo_task(a)).map(|a| a.due_time).collect();
    dues.sort();
    let (Some(&first), Some(&last)) = (dues.first(), dues.last()) else { return };
    if first > now {
        return;
    }
    let cadence = Duration::minutes(i64::from(cfg.sensor_cadence_minutes));
    let limit = Duration::seconds((cadence.num_seconds() as f64 * cfg.sensor_gap_factor).round() as i64);
    let active_end = (last + cadence).min(now);
    let mut readings: Vec<Timestamp> = ltm
        .sensors_of(p)
        .flat_map(|(_, b)| b.readings.iter())
        .filter(|r| r.value.kind() == SensorKind::Geo && r.at > first && r.at <= active_end)
        .map(|r| r.at)
        .collect();
    readings.sort();
    let mut prev = first;
    let mut raise = |from: Timestamp, to: Option<Timestamp>| {
        let minutes = (to.unwrap_or(now) - from).num_minutes();
        out.push(alert(
            Severity::Warning,
            p,
            RULE_SENSOR_GAP,
            &from.to_rfc3339(),
            format!("no geo record for {minutes} minutes since {}", from.format("%Y-%m-%d %H:%M")),
            from + limit,
            to,
        ));
    };
    for t in readings {
        if t - prev > limit {
            raise(prev, Some(t));
        }
        prev = prev.max(t);
    }
    if active_end - prev > limit {
        raise(prev, if active_end < now { Some(active_end) } else { None });
    }
}

fn droughts(p: &str, schedule: &Schedule, now: Timestamp, cfg: &AlertConfig, out: &mut Vec<Alert>) {
    let mut notes: Vec<Timestamp> = schedule
        .actions_of(p)
        .filter(|a| a.is_question())
        .flat_map(|a| a.history.iter())
        .filter_map(|t| match t.state {
            ActionState::Notified { at } if at <= now => Some(at),
            _ => None,
        })
        .collect();
    notes.sort();
    let Some(&first_note) = notes.first() else { return };
    let answers: Vec<Timestamp> = answered_times(schedule, p).into_iter().filter(|t| *t <= now).collect();
    let span = Duration::hours(i64::from(cfg.drought_hours));
    let mut anchors = vec![(first_note, None)];
    anchors.extend(answers.iter().map(|a| (*a, Some(*a))));
    for (i, (start, answer)) in anchors.iter().enumerate() {
        let end = anchors.get(i + 1).map(|(t, _)| *t);
        let horizon = end.unwrap_or(now);
        let count_before = |t: Timestamp| notes.iter().filter(|n| **n > t - span && **n <= t).count();
        let mut candidates = vec![*start + span];
        candidates.extend(notes.iter().copied().filter(|n| *n >= *start + span));
        let hit = candidates
            .into_iter()
            .filter(|t| *t <= horizon && end.is_none_or(|e| *t < e))
            .find(|t| count_before(*t) >= cfg.drought_min_notifications);
        if let Some(raised) = hit {
            let anchor = answer.map(|a| a.to_rfc3339()).unwrap_or_else(|| "start".into());
            out.push(alert(
                Severity::Warning,
                p,
                RULE_RESPONSE_DROUGHT,
                &anchor,
                format!("no answers for {} hours despite {} notifications", cfg.drought_hours, count_before(raised)),
                raised,
                end,
            ));
        }
    }
}

fn expiry_spikes(p: &str, schedule: &Schedule, now: Timestamp, cfg: &AlertConfig, out: &mut Vec<Alert>) {
    let mut per_day: BTreeMap<NaiveDate, (u32, u32, bool)> = BTreeMap::new();
    for a in schedule.actions_of(p).filter(|a| a.is_question()) {
        if let Some(first) = a.first_notified().filter(|t| *t <= now) {
            let e = per_day.entry(first.date_naive()).or_default();
            e.0 += 1;
            match &a.state {
                ActionState::Expired => {
                    if a.history.last().is_some_and(|t| t.at <= now) {
                        e.1 += 1;
                    }
                }
                s if !s.is_terminal() => e.2 = true,
                _ => {}
            }
        }
    }
    for (date, (sent, expired, unsettled)) in per_day {
        let day_end = midnight(date) + Duration::days(1);
        if unsettled || day_end > now || sent < cfg.expiry_min_sent {
            continue;
        }
        let ratio = f64::from(expired) / f64::from(sent);
        if ratio > cfg.expiry_ratio {
            out.push(alert(
                Severity::Warning,
                p,
                RULE_EXPIRY_SPIKE,
                &date.to_string(),
                format!("{expired} of {sent} questions expired on {date}"),
                day_end,
                None,
            ));
        }
    }
}

fn inconsistent(p: &str, schedule: &Schedule, ltm: &LtmStore, out: &mut Vec<Alert>) {
    for r in ltm.of_participant(p) {
        let crate::store::LtmPayload::Answer(a) = &r.payload else { continue };
        let problem = match schedule.actions.get(&a.action_id) {
            None => Some(format!("answer {} references unknown action {}", r.id, a.action_id)),
            Some(act) if act.participant != a.participant => {
                Some(format!("answer {} references action {} of another participant", r.id, a.action_id))
            }
            Some(_) if a.answer_time < a.notification_time => {
                Some(format!("answer {} precedes its notification", r.id))
            }
            Some(_) => None,
        };
        if let Some(message) = problem {
            out.push(alert(Severity::Critical, p, RULE_INCONSISTENT_RECORD, &r.id, message, r.recorded_at, None));
        }
    }
}
