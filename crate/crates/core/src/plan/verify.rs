//! Independent re-validation of expanded schedules.
//!
//! This deliberately shares no placement code with the expander: it only checks that the
//! output satisfies the plan's constraints.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use serde::Serialize;

use super::{AvoidWindow, ExperimentPlan, ScheduledAction, TaskKind};
use crate::time::{minute_of_day, time_minutes};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    DuplicateId(String),
    UnknownOccurrence(String),
    OutsidePlan(String),
    QuietHours(String),
    AvoidWindow(String),
    MinGap { earlier: String, later: String },
    DailyCap { date: NaiveDate, count: usize },
    NotLaterSameDay(String),
    SensorDisplaced(String),
    MissingSensor { template: String, nominal: String },
}

pub fn check_expansion(
    plan: &ExperimentPlan,
    participant: &str,
    avoid: &[AvoidWindow],
    threshold: f64,
    actions: &[ScheduledAction],
) -> Vec<Violation> {
    let mut v = Vec::new();
    let mut ids = BTreeSet::new();
    for a in actions {
        if !ids.insert(a.id.as_str()) {
            v.push(Violation::DuplicateId(a.id.clone()));
        }
        if !plan.contains_date(a.due_time.date_naive()) {
            v.push(Violation::OutsidePlan(a.id.clone()));
        }
        let Some(t) = plan.template(&a.template_id) else {
            v.push(Violation::UnknownOccurrence(a.id.clone()));
            continue;
        };
        let nominal_minute = time_minutes(a.nominal_time.time());
        let occurs = match &t.recurrence {
            super::Recurrence::Every { minutes } => nominal_minute % minutes == 0,
            super::Recurrence::Daily { times } => times.iter().any(|x| time_minutes(*x) == nominal_minute),
        };
        if !occurs || a.nominal_time.time().format("%S").to_string() != "00" {
            v.push(Violation::UnknownOccurrence(a.id.clone()));
        }
        match a.kind {
            TaskKind::Sensor { .. } => {
                if a.due_time != a.nominal_time {
                    v.push(Violation::SensorDisplaced(a.id.clone()));
                }
            }
            TaskKind::Question { .. } => {
                if a.due_time < a.nominal_time || a.due_time.date_naive() != a.nominal_time.date_naive() {
                    v.push(Violation::NotLaterSameDay(a.id.clone()));
                }
                let minute = minute_of_day(&a.due_time);
                if plan.constraints.quiet_hours.is_some_and(|q| q.contains_minute(minute)) {
                    v.push(Violation::QuietHours(a.id.clone()));
                }
                let date = a.due_time.date_naive();
                let in_window = avoid.iter().any(|w| {
                    w.participant == participant
                        && w.date == date
                        && (w.source == super::WindowSource::Declared || w.confidence >= threshold)
                        && minute >= time_minutes(w.start)
                        && (minute < time_minutes(w.end) || time_minutes(w.end) == 0)
                });
                if in_window {
                    v.push(Violation::AvoidWindow(a.id.clone()));
                }
            }
        }
    }

    let mut questions: Vec<&ScheduledAction> = actions.iter().filter(|a| a.is_question()).collect();
    questions.sort_by_key(|a| a.due_time);
    let gap = Duration::minutes(i64::from(plan.constraints.min_gap_minutes));
    for pair in questions.windows(2) {
        if pair[1].due_time - pair[0].due_time < gap {
            v.push(Violation::MinGap { earlier: pair[0].id.clone(), later: pair[1].id.clone() });
        }
    }
    let mut per_day: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for q in &questions {
        *per_day.entry(q.due_time.date_naive()).or_default() += 1;
    }
    for (date, count) in per_day {
        if count > plan.constraints.max_daily_questions as usize {
            v.push(Violation::DailyCap { date, count });
        }
    }

    // every sensor occurrence must be present
    let present: BTreeSet<(&str, String)> = actions
        .iter()
        .filter(|a| !a.is_question())
        .map(|a| (a.template_id.as_str(), a.nominal_time.to_rfc3339()))
        .collect();
    for t in plan.templates.iter().filter(|t| !t.kind.is_question()) {
        let mut date = plan.start;
        while date < plan.end {
            let day = crate::time::midnight(date);
            let minutes: Vec<u32> = match &t.recurrence {
                super::Recurrence::Every { minutes } => (0..1440).filter(|m| m % minutes == 0).collect(),
                super::Recurrence::Daily { times } => times.iter().map(|x| time_minutes(*x)).collect(),
            };
            for m in minutes {
                let nominal = (day + Duration::minutes(i64::from(m))).to_rfc3339();
                if !present.contains(&(t.id.as_str(), nominal.clone())) {
                    v.push(Violation::MissingSensor { template: t.id.clone(), nominal });
                }
            }
            date = date.succ_opt().expect("date in range");
        }
    }
    v
}
