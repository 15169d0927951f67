//! Expansion of a plan into timed actions for one participant.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{action_id, ActionState, AvoidWindow, ExperimentPlan, PlanError, ScheduledAction, TaskTemplate};
use crate::time::{self, minute_of_day, Timestamp, MINUTES_PER_DAY};

/// Predicted avoid windows below this confidence are not honored.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpandOptions {
    pub confidence_threshold: f64,
}

impl Default for ExpandOptions {
    fn default() -> Self {
        Self { confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    DailyCap,
    NoFeasibleSlot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Diagnostic {
    QuietHoursCoverDay { date: NaiveDate },
    Dropped { template_id: String, nominal: Timestamp, reason: DropReason },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub actions: Vec<ScheduledAction>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Expand `plan` for `participant`.
///
/// Sensor occurrences are emitted at their nominal times. Question occurrences are placed one
/// day at a time in (priority desc, time asc) order: each takes the earliest minute at or
/// after its nominal time, on the same day, that is outside quiet hours and honored avoid
/// windows and at least `min_gap` from every question already placed. Occurrences with no
/// such minute, or beyond the daily cap, are dropped with a diagnostic.
pub fn expand_plan(
    plan: &ExperimentPlan,
    participant: &str,
    avoid: &[AvoidWindow],
    opts: ExpandOptions,
) -> Result<Expansion, PlanError> {
    plan.validate()?;
    let mut out = Expansion::default();
    let mut placed: Vec<Timestamp> = Vec::new();
    let windows = honored_by_date(avoid, participant, opts.confidence_threshold);
    for date in time::days(plan.start, plan.end) {
        let day_start = time::midnight(date);
        for t in plan.templates.iter().filter(|t| !t.kind.is_question()) {
            for m in t.recurrence.minutes_of_day() {
                let nominal = day_start + Duration::minutes(i64::from(m));
                out.actions.push(new_action(plan, participant, t, nominal, nominal));
            }
        }

        if plan.constraints.quiet_hours.is_some_and(|q| q.covers_whole_day()) {
            out.diagnostics.push(Diagnostic::QuietHoursCoverDay { date });
            continue;
        }
        let mut occurrences: Vec<(&TaskTemplate, Timestamp)> = plan
            .templates
            .iter()
            .filter(|t| t.kind.is_question())
            .flat_map(|t| {
                t.recurrence
                    .minutes_of_day()
                    .into_iter()
                    .map(move |m| (t, day_start + Duration::minutes(i64::from(m))))
            })
            .collect();
        occurrences.sort_by(|a, b| b.0.priority.cmp(&a.0.priority).then(a.1.cmp(&b.1)).then(a.0.id.cmp(&b.0.id)));

        let placer = DayPlacer {
            date,
            plan,
            windows: windows.get(&date).map(Vec::as_slice).unwrap_or(&[]),
        };
        let mut count = 0u32;
        for (t, nominal) in occurrences {
            if count >= plan.constraints.max_daily_questions {
                out.diagnostics.push(Diagnostic::Dropped {
                    template_id: t.id.clone(),
                    nominal,
                    reason: DropReason::DailyCap,
                });
                continue;
            }
            match placer.earliest(nominal, &placed) {
                Some(due) => {
                    insert_sorted(&mut placed, due);
                    count += 1;
                    out.actions.push(new_action(plan, participant, t, nominal, due));
                }
                None => out.diagnostics.push(Diagnostic::Dropped {
                    template_id: t.id.clone(),
                    nominal,
                    reason: DropReason::NoFeasibleSlot,
                }),
            }
        }
    }
    out.actions.sort_by(|a, b| a.due_time.cmp(&b.due_time).then_with(|| a.id.cmp(&b.id)));
    Ok(out)
}

fn new_action(plan: &ExperimentPlan, participant: &str, t: &TaskTemplate, nominal: Timestamp, due: Timestamp) -> ScheduledAction {
    ScheduledAction {
        id: action_id(&plan.id, participant, &t.id, &nominal),
        plan_id: plan.id.clone(),
        participant: participant.to_string(),
        template_id: t.id.clone(),
        kind: t.kind,
        priority: t.priority,
        validity_minutes: t.validity_minutes,
        nominal_time: nominal,
        due_time: due,
        state: ActionState::Pending,
        history: Vec::new(),
    }
}

/// Honored windows for `participant`, grouped by date as `[start, end)` minute ranges.
pub(crate) fn honored_by_date(
    avoid: &[AvoidWindow],
    participant: &str,
    threshold: f64,
) -> BTreeMap<NaiveDate, Vec<(u32, u32)>> {
    let mut by_date: BTreeMap<NaiveDate, Vec<(u32, u32)>> = BTreeMap::new();
    for w in avoid.iter().filter(|w| w.participant == participant && w.honored(threshold)) {
        by_date.entry(w.date).or_default().push((w.start_minute(), w.end_minute()));
    }
    by_date
}

pub(crate) fn insert_sorted(v: &mut Vec<Timestamp>, t: Timestamp) {
    let pos = v.partition_point(|x| *x <= t);
    v.insert(pos, t);
}

/// Minute-level feasibility search for question placement on one day.
pub(crate) struct DayPlacer<'a> {
    pub date: NaiveDate,
    pub plan: &'a ExperimentPlan,
    pub windows: &'a [(u32, u32)],
}

impl DayPlacer<'_> {
    fn minute_allowed(&self, minute: u32) -> bool {
        if self.plan.constraints.quiet_hours.is_some_and(|q| q.contains_minute(minute)) {
            return false;
        }
        !self.windows.iter().any(|(s, e)| minute >= *s && minute < *e)
    }

    /// Earliest feasible instant at or after `nominal` on this day. `placed` must be sorted.
    pub fn earliest(&self, nominal: Timestamp, placed: &[Timestamp]) -> Option<Timestamp> {
        let gap = Duration::minutes(i64::from(self.plan.constraints.min_gap_minutes));
        let day_start = time::midnight(self.date);
        let first = if nominal.date_naive() == self.date { minute_of_day(&nominal) } else { 0 };
        (first..MINUTES_PER_DAY).find_map(|m| {
            if !self.minute_allowed(m) {
                return None;
            }
            let t = day_start + Duration::minutes(i64::from(m));
            let pos = placed.partition_point(|x| *x < t);
            let after_ok = placed.get(pos).is_none_or(|n| *n - t >= gap);
            let before_ok = pos == 0 || t - placed[pos - 1] >= gap;
            (after_ok && before_ok).then_some(t)
        })
    }
}
