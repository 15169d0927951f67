//! Live schedule state: plans, actions, re-plans and outcomes, with the operations that
//! drive the delivery state machine.
//!
//! Every mutating operation has a `check_*` twin that validates without mutating, so callers
//! can log an event before applying it and replay the log later with identical results.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::expand::{insert_sorted, DayPlacer};
use super::{ActionState, AvoidWindow, ExperimentPlan, PlanError, ScheduledAction, DEFAULT_CONFIDENCE_THRESHOLD};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ReplanOp {
    Snooze { minutes: u32 },
    Move { new_time: Timestamp },
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplanRequest {
    pub action_id: String,
    pub participant: String,
    #[serde(flatten)]
    pub op: ReplanOp,
    pub requested_at: Timestamp,
}

/// An accepted re-plan; also a training signal for the scheduler.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplanEvent {
    pub request: ReplanRequest,
    pub state_before: String,
    pub previous_due: Timestamp,
    pub new_due: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum OutcomeKind {
    Answered { at: Timestamp },
    Expired,
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub action_id: String,
    pub participant: String,
    pub template_id: String,
    pub question: bool,
    #[serde(flatten)]
    pub kind: OutcomeKind,
    pub notification_time: Option<Timestamp>,
    pub answer_time: Option<Timestamp>,
    pub delay_minutes: Option<f64>,
    pub recorded_at: Timestamp,
}

/// Clock-driven transitions found by [`Schedule::sweep`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "sweep", rename_all = "snake_case")]
pub enum SweepEvent {
    /// Snooze ended: back to Pending.
    Resume { action_id: String, at: Timestamp },
    /// Delivered but unanswered past the validity window.
    Expire { action_id: String, at: Timestamp },
    /// Never delivered and already past the validity window.
    SkipStale { action_id: String, at: Timestamp },
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ScheduleIndex {
    pending: BTreeMap<String, BTreeSet<(Timestamp, String)>>,
    notified: BTreeSet<(Timestamp, String)>,
    snoozed: BTreeSet<(Timestamp, String)>,
    /// Non-skipped question actions per (participant, plan), keyed by due time.
    questions: BTreeMap<(String, String), BTreeSet<(Timestamp, String)>>,
    settled: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schedule {
    pub plans: BTreeMap<String, ExperimentPlan>,
    pub actions: BTreeMap<String, ScheduledAction>,
    pub outcomes: Vec<ExecutionOutcome>,
    pub replans: Vec<ReplanEvent>,
    /// participant -> date -> windows
    pub avoid_windows: BTreeMap<String, BTreeMap<NaiveDate, Vec<AvoidWindow>>>,
    pub confidence_threshold: f64,
    #[serde(skip)]
    index: ScheduleIndex,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            plans: BTreeMap::new(),
            actions: BTreeMap::new(),
            outcomes: Vec::new(),
            replans: Vec::new(),
            avoid_windows: BTreeMap::new(),
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            index: ScheduleIndex::default(),
        }
    }
}

impl PartialEq for Schedule {
    fn eq(&self, other: &Self) -> bool {
        self.plans == other.plans
            && self.actions == other.actions
            && self.outcomes == other.outcomes
            && self.replans == other.replans
            && self.avoid_windows == other.avoid_windows
            && self.confidence_threshold == other.confidence_threshold
    }
}

fn settled_err(a: &ScheduledAction) -> PlanError {
    PlanError::AlreadySettled { action: a.id.clone(), state: a.state.name().into() }
}

impl Schedule {
    /// Rebuild the lookup indexes; needed after deserialization.
    pub fn reindex(&mut self) {
        self.index = ScheduleIndex::default();
        let ids: Vec<String> = self.actions.keys().cloned().collect();
        for id in ids {
            self.index_insert(&id);
        }
        for (i, o) in self.outcomes.iter().enumerate() {
            if !matches!(o.kind, OutcomeKind::Error { .. }) {
                self.index.settled.insert(o.action_id.clone(), i);
            }
        }
    }

    fn index_remove(&mut self, id: &str) {
        let Some(a) = self.actions.get(id) else { return };
        let key = (a.due_time, a.id.clone());
        if let Some(set) = self.index.pending.get_mut(&a.participant) {
            set.remove(&key);
        }
        self.index.notified.remove(&(a.deadline(), a.id.clone()));
        if let ActionState::Snoozed { until } = a.state {
            self.index.snoozed.remove(&(until, a.id.clone()));
        }
        if let Some(set) = self.index.questions.get_mut(&(a.participant.clone(), a.plan_id.clone())) {
            set.remove(&key);
        }
    }

    fn index_insert(&mut self, id: &str) {
        let Some(a) = self.actions.get(id) else { return };
        let key = (a.due_time, a.id.clone());
        match a.state {
            ActionState::Pending => {
                self.index.pending.entry(a.participant.clone()).or_default().insert(key.clone());
            }
            ActionState::Notified { .. } => {
                self.index.notified.insert((a.deadline(), a.id.clone()));
            }
            ActionState::Snoozed { until } => {
                self.index.snoozed.insert((until, a.id.clone()));
            }
            _ => {}
        }
        if a.is_question() && a.state != ActionState::Skipped {
            self.index
                .questions
                .entry((a.participant.clone(), a.plan_id.clone()))
                .or_default()
                .insert(key);
        }
    }

    /// Mutate one action with index maintenance.
    fn update<R>(&mut self, id: &str, f: impl FnOnce(&mut ScheduledAction) -> R) -> Option<R> {
        self.index_remove(id);
        let r = self.actions.get_mut(id).map(f);
        self.index_insert(id);
        r
    }

    pub fn action(&self, id: &str) -> Result<&ScheduledAction, PlanError> {
        self.actions.get(id).ok_or_else(|| PlanError::UnknownAction(id.to_string()))
    }

    pub fn check_add_plan(&self, plan: &ExperimentPlan) -> Result<(), PlanError> {
        plan.validate()?;
        if self.plans.contains_key(&plan.id) {
            return Err(PlanError::InvalidPlan(format!("plan {} already exists", plan.id)));
        }
        Ok(())
    }

    pub fn add_plan(&mut self, plan: ExperimentPlan) -> Result<(), PlanError> {
        self.check_add_plan(&plan)?;
        self.plans.insert(plan.id.clone(), plan);
        Ok(())
    }

    pub fn check_insert_actions(&self, actions: &[ScheduledAction]) -> Result<(), PlanError> {
        for a in actions {
            if !self.plans.contains_key(&a.plan_id) {
                return Err(PlanError::UnknownPlan(a.plan_id.clone()));
            }
            if self.actions.contains_key(&a.id) {
                return Err(PlanError::InvalidPlan(format!("action {} already scheduled", a.id)));
            }
        }
        Ok(())
    }

    pub fn insert_actions(&mut self, actions: Vec<ScheduledAction>) -> Result<(), PlanError> {
        self.check_insert_actions(&actions)?;
        for a in actions {
            let id = a.id.clone();
            self.actions.insert(id.clone(), a);
            self.index_insert(&id);
        }
        Ok(())
    }

    pub fn actions_of<'a>(&'a self, participant: &'a str) -> impl Iterator<Item = &'a ScheduledAction> + 'a {
        self.actions.values().filter(move |a| a.participant == participant)
    }

    /// Pending actions due at or before `now`, highest priority first, then earliest due.
    pub fn due_actions(&self, participant: &str, now: Timestamp) -> Vec<&ScheduledAction> {
        let mut due: Vec<&ScheduledAction> = self
            .index
            .pending
            .get(participant)
            .into_iter()
            .flat_map(|set| set.iter().take_while(|(t, _)| *t <= now))
            .filter_map(|(_, id)| self.actions.get(id))
            .collect();
        due.sort_by(|a, b| b.priority.cmp(&a.priority).then(a.due_time.cmp(&b.due_time)).then(a.id.cmp(&b.id)));
        due
    }

    /// Next pending due time for `participant`, if any.
    pub fn next_due(&self, participant: &str) -> Option<Timestamp> {
        self.index.pending.get(participant).and_then(|s| s.iter().next()).map(|(t, _)| *t)
    }

    pub fn check_notify(&self, id: &str, at: Timestamp) -> Result<(), PlanError> {
        self.action(id)?.check_transition(&ActionState::Notified { at }, at)
    }

    pub fn notify(&mut self, id: &str, at: Timestamp) -> Result<(), PlanError> {
        self.check_notify(id, at)?;
        self.update(id, |a| a.transition(ActionState::Notified { at }, at)).expect("checked")
    }

    /// Clock-driven transitions that are due at `now`, ordered by time then id.
    pub fn sweep(&self, now: Timestamp) -> Vec<SweepEvent> {
        let mut events = Vec::new();
        for (until, id) in self.index.snoozed.iter().take_while(|(t, _)| *t <= now) {
            events.push((*until, SweepEvent::Resume { action_id: id.clone(), at: *until }));
        }
        for (deadline, id) in self.index.notified.iter().take_while(|(t, _)| *t < now) {
            let last = self.actions[id].history.last().map(|h| h.at).unwrap_or(*deadline);
            let at = (*deadline).max(last);
            events.push((at, SweepEvent::Expire { action_id: id.clone(), at }));
        }
        for set in self.index.pending.values() {
            for (_, id) in set.iter() {
                let a = &self.actions[id];
                if a.due_time >= now {
                    break;
                }
                if a.deadline() < now {
                    let last = a.history.last().map(|h| h.at).unwrap_or(a.deadline());
                    let at = a.deadline().max(last);
                    events.push((at, SweepEvent::SkipStale { action_id: id.clone(), at }));
                }
            }
        }
        events.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| sweep_id(&a.1).cmp(sweep_id(&b.1))));
        events.into_iter().map(|(_, e)| e).collect()
    }

    pub fn check_sweep_event(&self, event: &SweepEvent) -> Result<(), PlanError> {
        match event {
            SweepEvent::Resume { action_id, at } => self.action(action_id)?.check_transition(&ActionState::Pending, *at),
            SweepEvent::Expire { action_id, at } => self.action(action_id)?.check_transition(&ActionState::Expired, *at),
            SweepEvent::SkipStale { action_id, at } => {
                self.action(action_id)?.check_transition(&ActionState::Skipped, *at)
            }
        }
    }

    /// Apply a sweep event. Expiry records an outcome.
    pub fn apply_sweep_event(&mut self, event: &SweepEvent) -> Result<(), PlanError> {
        self.check_sweep_event(event)?;
        match event {
            SweepEvent::Resume { action_id, at } => {
                self.update(action_id, |a| a.transition(ActionState::Pending, *at)).expect("checked")
            }
            SweepEvent::Expire { action_id, at } => {
                self.record_outcome(action_id, OutcomeKind::Expired, *at).map(|_| ())
            }
            SweepEvent::SkipStale { action_id, at } => {
                self.update(action_id, |a| a.transition(ActionState::Skipped, *at)).expect("checked")
            }
        }
    }

    pub fn check_replan(&self, req: &ReplanRequest) -> Result<(), PlanError> {
        let a = self.action(&req.action_id)?;
        if a.participant != req.participant {
            return Err(PlanError::WrongParticipant { action: a.id.clone() });
        }
        if a.state.is_terminal() {
            return Err(settled_err(a));
        }
        match &req.op {
            ReplanOp::Snooze { minutes } => {
                if *minutes == 0 || *minutes > 24 * 60 {
                    return Err(PlanError::InvalidSnooze(*minutes));
                }
                let until = snooze_until(a, req.requested_at, *minutes);
                a.check_transition(&ActionState::Snoozed { until }, req.requested_at)
            }
            ReplanOp::Skip => a.check_transition(&ActionState::Skipped, req.requested_at),
            ReplanOp::Move { new_time } => {
                if a.state != ActionState::Pending {
                    return Err(PlanError::IllegalTransition {
                        action: a.id.clone(),
                        from: a.state.name().into(),
                        to: "moved".into(),
                    });
                }
                let plan = self.plans.get(&a.plan_id).ok_or_else(|| PlanError::UnknownPlan(a.plan_id.clone()))?;
                if !plan.contains_date(new_time.date_naive()) {
                    return Err(PlanError::OutsidePlan(*new_time));
                }
                if a.is_question() {
                    let gap = Duration::minutes(i64::from(plan.constraints.min_gap_minutes));
                    if let Some(set) = self.index.questions.get(&(a.participant.clone(), a.plan_id.clone())) {
                        let lo = *new_time - gap;
                        let conflict = set
                            .range((lo, String::new())..)
                            .take_while(|(t, _)| *t - *new_time < gap)
                            .filter(|(t, id)| *id != a.id && (*t - *new_time).abs() < gap)
                            .min_by_key(|(t, _)| (*t - *new_time).abs());
                        if let Some((_, id)) = conflict {
                            return Err(PlanError::GapConflict { conflicting: id.clone() });
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Apply a participant re-plan and record it.
    pub fn apply_replan(&mut self, req: &ReplanRequest) -> Result<ReplanEvent, PlanError> {
        self.check_replan(req)?;
        let a = &self.actions[&req.action_id];
        let state_before = a.state.name().to_string();
        let previous_due = a.due_time;
        let at = req.requested_at;
        match &req.op {
            ReplanOp::Snooze { minutes } => {
                let until = snooze_until(a, at, *minutes);
                self.update(&req.action_id, |a| a.transition(ActionState::Snoozed { until }, at)).expect("checked")?;
            }
            ReplanOp::Skip => {
                self.update(&req.action_id, |a| a.transition(ActionState::Skipped, at)).expect("checked")?;
            }
            ReplanOp::Move { new_time } => {
                let t = *new_time;
                self.update(&req.action_id, |a| a.due_time = t);
            }
        }
        let event = ReplanEvent {
            request: req.clone(),
            state_before,
            previous_due,
            new_due: self.actions[&req.action_id].due_time,
        };
        self.replans.push(event.clone());
        Ok(event)
    }

    /// The settled outcome for `id`, if any.
    pub fn settled_outcome(&self, id: &str) -> Option<&ExecutionOutcome> {
        self.index.settled.get(id).map(|i| &self.outcomes[*i])
    }

    pub fn check_outcome(&self, id: &str, kind: &OutcomeKind, at: Timestamp) -> Result<(), PlanError> {
        let a = self.action(id)?;
        if a.state.is_terminal() {
            return if self.settled_outcome(id).is_some() { Ok(()) } else { Err(settled_err(a)) };
        }
        match kind {
            OutcomeKind::Answered { at: answered } => {
                if *answered > a.deadline() {
                    return Err(PlanError::PastDeadline { at: *answered, deadline: a.deadline() });
                }
                a.check_transition(&ActionState::Answered { at: *answered }, *answered)
            }
            OutcomeKind::Expired => a.check_transition(&ActionState::Expired, at),
            OutcomeKind::Error { .. } => match a.state {
                ActionState::Notified { .. } => Ok(()),
                _ => Err(PlanError::IllegalTransition {
                    action: id.to_string(),
                    from: a.state.name().into(),
                    to: "error".into(),
                }),
            },
        }
    }

    /// Settle a delivered action. A second settlement returns the first outcome unchanged
    /// (`true` in the second tuple slot marks the replay).
    pub fn record_outcome(
        &mut self,
        id: &str,
        kind: OutcomeKind,
        at: Timestamp,
    ) -> Result<(ExecutionOutcome, bool), PlanError> {
        self.check_outcome(id, &kind, at)?;
        if let Some(prior) = self.settled_outcome(id) {
            return Ok((prior.clone(), true));
        }
        let a = &self.actions[id];
        let notification_time = a.last_notified();
        let (answer_time, delay) = match &kind {
            OutcomeKind::Answered { at } => {
                (Some(*at), notification_time.map(|n| (*at - n).num_seconds() as f64 / 60.0))
            }
            _ => (None, None),
        };
        let outcome = ExecutionOutcome {
            action_id: id.to_string(),
            participant: a.participant.clone(),
            template_id: a.template_id.clone(),
            question: a.is_question(),
            kind: kind.clone(),
            notification_time,
            answer_time,
            delay_minutes: delay,
            recorded_at: at,
        };
        match kind {
            OutcomeKind::Answered { at } => {
                self.update(id, |a| a.transition(ActionState::Answered { at }, at)).expect("checked")?;
            }
            OutcomeKind::Expired => {
                self.update(id, |a| a.transition(ActionState::Expired, at)).expect("checked")?;
            }
            OutcomeKind::Error { .. } => {}
        }
        if !matches!(outcome.kind, OutcomeKind::Error { .. }) {
            self.index.settled.insert(id.to_string(), self.outcomes.len());
        }
        self.outcomes.push(outcome.clone());
        Ok((outcome, false))
    }

    pub fn windows_for(&self, participant: &str, date: NaiveDate) -> &[AvoidWindow] {
        self.avoid_windows
            .get(participant)
            .and_then(|m| m.get(&date))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn check_publish_windows(&self, windows: &[AvoidWindow]) -> Result<(), PlanError> {
        match windows.iter().find(|w| !w.is_valid()) {
            Some(w) => Err(PlanError::InvalidPlan(format!("invalid avoid window {}-{}", w.start, w.end))),
            None => Ok(()),
        }
    }

    /// Replace the windows for (participant, date) and re-place that day's question actions
    /// that have not been touched yet. Actions that no longer fit are skipped at `at`.
    pub fn publish_windows(
        &mut self,
        participant: &str,
        date: NaiveDate,
        windows: Vec<AvoidWindow>,
        at: Timestamp,
    ) -> Result<(), PlanError> {
        self.check_publish_windows(&windows)?;
        self.avoid_windows.entry(participant.to_string()).or_default().insert(date, windows);

        let untouched: Vec<(String, String)> = self
            .actions_of(participant)
            .filter(|a| {
                a.is_question()
                    && a.nominal_time.date_naive() == date
                    && a.state == ActionState::Pending
                    && a.history.is_empty()
            })
            .map(|a| (a.plan_id.clone(), a.id.clone()))
            .collect();
        let mut by_plan: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (plan, id) in untouched {
            by_plan.entry(plan).or_default().push(id);
        }

        let threshold = self.confidence_threshold;
        let honored: Vec<(u32, u32)> = self
            .windows_for(participant, date)
            .iter()
            .filter(|w| w.honored(threshold))
            .map(|w| (w.start_minute(), w.end_minute()))
            .collect();
        for (plan_id, mut ids) in by_plan {
            let Some(plan) = self.plans.get(&plan_id).cloned() else { continue };
            let lo = crate::time::midnight(date) - Duration::days(1);
            let hi = crate::time::midnight(date) + Duration::days(2);
            let mut placed: Vec<Timestamp> = self
                .index
                .questions
                .get(&(participant.to_string(), plan_id.clone()))
                .map(|set| {
                    set.range((lo, String::new())..)
                        .take_while(|(t, _)| *t < hi)
                        .filter(|(_, id)| !ids.contains(id))
                        .map(|(t, _)| *t)
                        .collect()
                })
                .unwrap_or_default();
            let mut count = placed.iter().filter(|t| t.date_naive() == date).count() as u32;
            ids.sort_by(|x, y| {
                let (a, b) = (&self.actions[x], &self.actions[y]);
                b.priority
                    .cmp(&a.priority)
                    .then(a.nominal_time.cmp(&b.nominal_time))
                    .then(a.template_id.cmp(&b.template_id))
            });
            let placer = DayPlacer { date, plan: &plan, windows: &honored };
            for id in ids {
                let nominal = self.actions[&id].nominal_time;
                let slot = if count < plan.constraints.max_daily_questions { placer.earliest(nominal, &placed) } else { None };
                match slot {
                    Some(due) => {
                        insert_sorted(&mut placed, due);
                        count += 1;
                        self.update(&id, |a| a.due_time = due);
                    }
                    None => {
                        self.update(&id, |a| a.transition(ActionState::Skipped, at)).expect("exists")?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn sweep_id(e: &SweepEvent) -> &str {
    match e {
        SweepEvent::Resume { action_id, .. } | SweepEvent::Expire { action_id, .. } | SweepEvent::SkipStale { action_id, .. } => {
            action_id
        }
    }
}

fn snooze_until(a: &ScheduledAction, requested_at: Timestamp, minutes: u32) -> Timestamp {
    requested_at.max(a.due_time) + Duration::minutes(i64::from(minutes))
}
