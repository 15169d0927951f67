use chrono::{Duration, NaiveDate, NaiveTime};
use proptest::prelude::*;

use super::*;
use crate::time::{at, clock, midnight, time_minutes, DailyInterval};

fn day(n: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 3, 4).unwrap() + Duration::days(i64::from(n))
}

fn hm(h: u32, m: u32) -> NaiveTime {
    NaiveTime::from_hms_opt(h, m, 0).unwrap()
}

fn question(id: &str, times: &[NaiveTime], priority: i32) -> TaskTemplate {
    TaskTemplate {
        id: id.into(),
        kind: TaskKind::Question { question: QuestionKind::What },
        recurrence: Recurrence::Daily { times: times.to_vec() },
        validity_minutes: 60,
        priority,
    }
}

fn plan(templates: Vec<TaskTemplate>, days: u32, min_gap: u32, cap: u32) -> ExperimentPlan {
    ExperimentPlan {
        format_version: PLAN_FORMAT_VERSION,
        id: "plan".into(),
        researcher: "r1".into(),
        start: day(0),
        end: day(days),
        templates,
        constraints: PlanConstraints { min_gap_minutes: min_gap, quiet_hours: None, max_daily_questions: cap },
    }
}

fn window(date: NaiveDate, start: NaiveTime, end: NaiveTime, confidence: f64) -> AvoidWindow {
    AvoidWindow { participant: "P1".into(), date, start, end, source: WindowSource::Predicted, confidence }
}

fn expand(p: &ExperimentPlan, avoid: &[AvoidWindow]) -> Expansion {
    expand_plan(p, "P1", avoid, ExpandOptions::default()).unwrap()
}

#[test]
fn daily_question_over_three_days() {
    let p = plan(vec![question("q", &[hm(10, 0)], 0)], 3, 0, 10);
    let e = expand(&p, &[]);
    let dues: Vec<_> = e.actions.iter().map(|a| a.due_time).collect();
    assert_eq!(dues, (0..3).map(|d| at(day(d), hm(10, 0))).collect::<Vec<_>>());
    assert!(e.diagnostics.is_empty());
}

/// Brute force: scan every minute of the day for the first one satisfying all constraints.
fn earliest_feasible(p: &ExperimentPlan, date: NaiveDate, nominal: u32, windows: &[AvoidWindow], placed: &[i64]) -> Option<u32> {
    (0..1440u32).filter(|m| *m >= nominal).find(|m| {
        let abs = (midnight(date) + Duration::minutes(i64::from(*m))).timestamp() / 60;
        let quiet = p.constraints.quiet_hours.is_some_and(|q| q.contains_minute(*m));
        let avoided = windows.iter().any(|w| w.date == date && w.confidence >= 0.6 && w.contains_minute(*m));
        let gap_ok = placed.iter().all(|x| (abs - x).abs() >= i64::from(p.constraints.min_gap_minutes));
        !quiet && !avoided && gap_ok
    })
}

#[test]
fn displaced_to_end_of_avoid_window() {
    let p = plan(vec![question("q", &[hm(10, 0)], 0)], 1, 30, 10);
    let w = [window(day(0), hm(9, 0), hm(11, 0), 0.9)];
    let e = expand(&p, &w);
    let oracle = earliest_feasible(&p, day(0), 600, &w, &[]).unwrap();
    assert_eq!(oracle, 660);
    assert_eq!(e.actions[0].due_time, at(day(0), hm(11, 0)));
    assert_eq!(e.actions[0].nominal_time, at(day(0), hm(10, 0)));
}

#[test]
fn low_confidence_windows_are_ignored_but_declared_are_not() {
    let p = plan(vec![question("q", &[hm(10, 0)], 0)], 1, 0, 10);
    let e = expand(&p, &[window(day(0), hm(9, 0), hm(11, 0), 0.5)]);
    assert_eq!(e.actions[0].due_time, at(day(0), hm(10, 0)));
    let mut declared = window(day(0), hm(9, 0), hm(11, 0), 0.1);
    declared.source = WindowSource::Declared;
    let e = expand(&p, &[declared]);
    assert_eq!(e.actions[0].due_time, at(day(0), hm(11, 0)));
}

#[test]
fn daily_cap_keeps_highest_priority() {
    let templates = vec![
        question("low", &[hm(9, 0)], 1),
        question("high", &[hm(12, 0)], 5),
        question("mid", &[hm(15, 0)], 3),
    ];
    let p = plan(templates.clone(), 2, 0, 2);
    let e = expand(&p, &[]);
    // oracle: order all occurrences by (priority desc, time asc) and keep the first two
    let mut occ: Vec<_> = templates.iter().map(|t| (t.priority, t.id.clone())).collect();
    occ.sort_by(|a, b| b.0.cmp(&a.0));
    let keep: Vec<String> = occ.into_iter().take(2).map(|(_, id)| id).collect();
    for d in 0..2 {
        let ids: Vec<_> = e.actions.iter().filter(|a| a.due_time.date_naive() == day(d)).map(|a| a.template_id.clone()).collect();
        assert_eq!(ids.len(), 2);
        assert!(ids.iter().all(|i| keep.contains(i)));
    }
    assert_eq!(e.diagnostics.iter().filter(|d| matches!(d, Diagnostic::Dropped { reason: DropReason::DailyCap, .. })).count(), 2);
}

#[test]
fn quiet_hours_covering_the_day_yield_no_questions() {
    let mut p = plan(
        vec![
            question("q", &[hm(10, 0)], 0),
            TaskTemplate {
                id: "geo".into(),
                kind: TaskKind::Sensor { sensor: crate::context::SensorKind::Geo },
                recurrence: Recurrence::Every { minutes: 360 },
                validity_minutes: 15,
                priority: 0,
            },
        ],
        1,
        0,
        5,
    );
    p.constraints.quiet_hours = Some(DailyInterval::new(hm(8, 0), hm(8, 0)));
    let e = expand(&p, &[]);
    assert!(e.actions.iter().all(|a| !a.is_question()));
    assert_eq!(e.actions.len(), 4);
    assert_eq!(e.diagnostics, vec![Diagnostic::QuietHoursCoverDay { date: day(0) }]);
}

#[test]
fn quiet_hours_push_questions_to_morning() {
    let mut p = plan(vec![question("q", &[hm(6, 0)], 0)], 1, 0, 5);
    p.constraints.quiet_hours = Some(DailyInterval::new(hm(22, 0), hm(7, 30)));
    assert_eq!(expand(&p, &[]).actions[0].due_time, at(day(0), hm(7, 30)));
}

#[test]
fn sensors_ignore_avoid_windows() {
    let p = plan(
        vec![TaskTemplate {
            id: "geo".into(),
            kind: TaskKind::Sensor { sensor: crate::context::SensorKind::Geo },
            recurrence: Recurrence::Every { minutes: 15 },
            validity_minutes: 15,
            priority: 0,
        }],
        1,
        30,
        0,
    );
    let e = expand(&p, &[window(day(0), hm(0, 0), hm(0, 0), 1.0)]);
    assert_eq!(e.actions.len(), 96);
    assert!(e.actions.iter().all(|a| a.due_time == a.nominal_time));
}

#[test]
fn invalid_plans_are_rejected() {
    let mut p = plan(vec![question("q", &[hm(10, 0)], 0)], 1, 0, 5);
    p.end = p.start;
    assert!(matches!(p.validate(), Err(PlanError::InvalidPlan(_))));
    let mut p = plan(vec![question("q", &[hm(10, 0)], 0)], 1, 0, 5);
    p.templates[0].validity_minutes = 0;
    assert!(p.validate().is_err());
    p.templates[0].validity_minutes = 10;
    p.templates[0].recurrence = Recurrence::Every { minutes: 0 };
    assert!(p.validate().is_err());
}

#[test]
fn verifier_flags_hand_made_violations() {
    let p = plan(vec![question("a", &[hm(10, 0)], 0), question("b", &[hm(10, 10)], 0)], 1, 30, 1);
    let mut e = expand_plan(&p, "P1", &[], ExpandOptions::default()).unwrap();
    assert!(check_expansion(&p, "P1", &[], 0.6, &e.actions).is_empty());
    let mut extra = e.actions[0].clone();
    extra.id = action_id("plan", "P1", "b", &at(day(0), hm(10, 10)));
    extra.template_id = "b".into();
    extra.nominal_time = at(day(0), hm(10, 10));
    extra.due_time = at(day(0), hm(10, 10));
    e.actions.push(extra);
    let v = check_expansion(&p, "P1", &[window(day(0), hm(10, 5), hm(10, 30), 0.9)], 0.6, &e.actions);
    assert!(v.iter().any(|x| matches!(x, Violation::MinGap { .. })));
    assert!(v.iter().any(|x| matches!(x, Violation::DailyCap { .. })));
    assert!(v.iter().any(|x| matches!(x, Violation::AvoidWindow(_))));
}

// ---- state machine ------------------------------------------------------------------------

fn schedule_with(p: ExperimentPlan) -> Schedule {
    let mut s = Schedule::default();
    let e = expand_plan(&p, "P1", &[], ExpandOptions::default()).unwrap();
    s.add_plan(p).unwrap();
    s.insert_actions(e.actions).unwrap();
    s
}

fn first_id(s: &Schedule) -> String {
    s.actions.keys().next().unwrap().clone()
}

#[test]
fn snooze_thirty_minutes() {
    let mut s = schedule_with(plan(vec![question("q", &[hm(10, 0)], 0)], 1, 0, 5));
    let id = first_id(&s);
    let ten = at(day(0), hm(10, 0));
    let req = ReplanRequest { action_id: id.clone(), participant: "P1".into(), op: ReplanOp::Snooze { minutes: 30 }, requested_at: ten };
    let ev = s.apply_replan(&req).unwrap();
    assert_eq!(ev.new_due, at(day(0), hm(10, 30)));
    assert_eq!(s.actions[&id].state, ActionState::Snoozed { until: at(day(0), hm(10, 30)) });
    assert!(s.due_actions("P1", at(day(0), hm(10, 29))).is_empty());
    let sweep = s.sweep(at(day(0), hm(10, 30)));
    assert_eq!(sweep, vec![SweepEvent::Resume { action_id: id.clone(), at: at(day(0), hm(10, 30)) }]);
    s.apply_sweep_event(&sweep[0]).unwrap();
    assert_eq!(s.actions[&id].state, ActionState::Pending);
    assert_eq!(s.actions[&id].due_time, at(day(0), hm(10, 30)));
    assert_eq!(s.due_actions("P1", at(day(0), hm(10, 30))).len(), 1);
    assert_eq!(s.replans.len(), 1);
}

#[test]
fn early_snooze_shifts_relative_to_due_time() {
    let mut s = schedule_with(plan(vec![question("q", &[hm(10, 0)], 0)], 1, 0, 5));
    let id = first_id(&s);
    let req = ReplanRequest { action_id: id.clone(), participant: "P1".into(), op: ReplanOp::Snooze { minutes: 30 }, requested_at: at(day(0), hm(8, 0)) };
    s.apply_replan(&req).unwrap();
    assert_eq!(s.actions[&id].due_time, at(day(0), hm(10, 30)));
}

#[test]
fn skip_stops_delivery() {
    let mut s = schedule_with(plan(vec![question("q", &[hm(10, 0)], 0)], 1, 0, 5));
    let id = first_id(&s);
    let req = ReplanRequest { action_id: id.clone(), participant: "P1".into(), op: ReplanOp::Skip, requested_at: at(day(0), hm(9, 0)) };
    s.apply_replan(&req).unwrap();
    assert_eq!(s.actions[&id].state, ActionState::Skipped);
    assert!(s.due_actions("P1", at(day(0), hm(12, 0))).is_empty());
    let again = s.apply_replan(&req).unwrap_err();
    assert!(matches!(again, PlanError::AlreadySettled { .. }));
    assert_eq!(again.to_string(), format!("action {id} already settled as skipped"));
}

#[test]
fn move_near_sibling_rejected_with_conflict() {
    let mut s = schedule_with(plan(vec![question("a", &[hm(10, 0)], 0), question("b", &[hm(14, 0)], 0)], 1, 30, 5));
    let b = action_id("plan", "P1", "b", &at(day(0), hm(14, 0)));
    let a = action_id("plan", "P1", "a", &at(day(0), hm(10, 0)));
    // brute-force pairwise gap check
    let target = at(day(0), hm(10, 10));
    let others: Vec<_> = s.actions.values().filter(|x| x.id != b).collect();
    assert!(others.iter().any(|x| (x.due_time - target).num_minutes().abs() < 30));
    let req = ReplanRequest { action_id: b.clone(), participant: "P1".into(), op: ReplanOp::Move { new_time: target }, requested_at: at(day(0), hm(8, 0)) };
    assert_eq!(s.apply_replan(&req).unwrap_err(), PlanError::GapConflict { conflicting: a });
    let ok = ReplanRequest { op: ReplanOp::Move { new_time: at(day(0), hm(10, 30)) }, ..req };
    s.apply_replan(&ok).unwrap();
    assert_eq!(s.actions[&b].due_time, at(day(0), hm(10, 30)));
}

#[test]
fn move_outside_plan_rejected() {
    let mut s = schedule_with(plan(vec![question("q", &[hm(10, 0)], 0)], 1, 0, 5));
    let id = first_id(&s);
    let req = ReplanRequest { action_id: id, participant: "P1".into(), op: ReplanOp::Move { new_time: at(day(3), hm(10, 0)) }, requested_at: at(day(0), hm(8, 0)) };
    assert!(matches!(s.apply_replan(&req), Err(PlanError::OutsidePlan(_))));
}

#[test]
fn answer_delay_and_idempotent_settlement() {
    let mut s = schedule_with(plan(vec![question("q", &[hm(10, 0)], 0)], 1, 0, 5));
    let id = first_id(&s);
    s.notify(&id, at(day(0), hm(10, 0))).unwrap();
    let (o, dup) = s.record_outcome(&id, OutcomeKind::Answered { at: at(day(0), hm(10, 7)) }, at(day(0), hm(10, 7))).unwrap();
    assert!(!dup);
    assert_eq!(o.delay_minutes, Some(7.0));
    assert_eq!(o.notification_time, Some(at(day(0), hm(10, 0))));
    let (again, dup) = s.record_outcome(&id, OutcomeKind::Answered { at: at(day(0), hm(10, 9)) }, at(day(0), hm(10, 9))).unwrap();
    assert!(dup);
    assert_eq!(again, o);
    assert_eq!(s.outcomes.len(), 1);
}

#[test]
fn expiry_by_clock_steps() {
    let mut s = schedule_with(plan(vec![question("q", &[hm(10, 0)], 0)], 1, 0, 5));
    let id = first_id(&s);
    s.notify(&id, at(day(0), hm(10, 0))).unwrap();
    // step the clock a minute at a time until something expires
    let mut expired_at = None;
    for m in 600..=700 {
        let now = at(day(0), clock(m));
        for ev in s.sweep(now) {
            s.apply_sweep_event(&ev).unwrap();
            expired_at.get_or_insert(now);
        }
    }
    assert_eq!(expired_at, Some(at(day(0), hm(11, 1))));
    assert_eq!(s.actions[&id].state, ActionState::Expired);
    assert!(matches!(s.outcomes[0].kind, OutcomeKind::Expired));
}

#[test]
fn answers_for_pending_actions_are_illegal() {
    let mut s = schedule_with(plan(vec![question("q", &[hm(10, 0)], 0)], 1, 0, 5));
    let id = first_id(&s);
    let err = s.record_outcome(&id, OutcomeKind::Answered { at: at(day(0), hm(10, 0)) }, at(day(0), hm(10, 0))).unwrap_err();
    assert!(matches!(err, PlanError::IllegalTransition { .. }));
}

#[test]
fn stale_pending_actions_are_skipped() {
    let s = schedule_with(plan(vec![question("q", &[hm(10, 0)], 0)], 1, 0, 5));
    let id = first_id(&s);
    let ev = s.sweep(at(day(0), hm(12, 0)));
    assert_eq!(ev, vec![SweepEvent::SkipStale { action_id: id, at: at(day(0), hm(11, 0)) }]);
}

#[test]
fn due_actions_order_by_priority_then_time() {
    let s = schedule_with(plan(vec![question("a", &[hm(9, 0)], 1), question("b", &[hm(10, 0)], 5)], 1, 0, 5));
    let due = s.due_actions("P1", at(day(0), hm(10, 0)));
    assert_eq!(due.iter().map(|a| a.template_id.as_str()).collect::<Vec<_>>(), ["b", "a"]);
}

#[test]
fn published_windows_replace_untouched_questions() {
    let mut s = schedule_with(plan(vec![question("q", &[hm(10, 0), hm(11, 30)], 0)], 2, 30, 5));
    let w = window(day(1), hm(9, 0), hm(11, 0), 0.9);
    s.publish_windows("P1", day(1), vec![w], midnight(day(1))).unwrap();
    let dues: Vec<_> = s.actions.values().filter(|a| a.nominal_time.date_naive() == day(1)).map(|a| a.due_time).collect();
    assert_eq!(dues, vec![at(day(1), hm(11, 0)), at(day(1), hm(11, 30))]);
    // day 0 untouched
    assert!(s.actions.values().filter(|a| a.nominal_time.date_naive() == day(0)).all(|a| a.due_time == a.nominal_time));
    // republishing is idempotent
    let before = s.clone();
    s.publish_windows("P1", day(1), vec![window(day(1), hm(9, 0), hm(11, 0), 0.9)], midnight(day(1))).unwrap();
    assert_eq!(s, before);
}

#[test]
fn reindex_restores_queries() {
    let mut s = schedule_with(plan(vec![question("q", &[hm(10, 0)], 0)], 2, 0, 5));
    let json = serde_json::to_string(&s).unwrap();
    let mut back: Schedule = serde_json::from_str(&json).unwrap();
    back.reindex();
    assert_eq!(back, s);
    assert_eq!(back.due_actions("P1", at(day(1), hm(10, 0))).len(), s.due_actions("P1", at(day(1), hm(10, 0))).len());
    s.reindex();
}

fn allowed(from: &ActionState, to: &ActionState) -> bool {
    use ActionState::*;
    matches!(
        (from, to),
        (Pending, Notified { .. }) | (Pending, Snoozed { .. }) | (Pending, Skipped) | (Snoozed { .. }, Pending)
            | (Notified { .. }, Answered { .. }) | (Notified { .. }, Expired) | (Notified { .. }, Snoozed { .. })
    )
}

#[derive(Debug, Clone)]
enum Op {
    Notify,
    Snooze(u32),
    Skip,
    Move(u32),
    Answer(u32),
    Tick(u32),
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        Just(Op::Notify),
        (0u32..120).prop_map(Op::Snooze),
        Just(Op::Skip),
        (0u32..1440).prop_map(Op::Move),
        (0u32..90).prop_map(Op::Answer),
        (0u32..180).prop_map(Op::Tick),
    ]
}

proptest! {
    #[test]
    fn random_operation_sequences_never_break_the_machine(ops in proptest::collection::vec((0usize..3, op_strategy()), 1..40)) {
        let mut s = schedule_with(plan(vec![question("q", &[hm(9, 0), hm(12, 0), hm(15, 0)], 0)], 1, 20, 5));
        let ids: Vec<String> = s.actions.keys().cloned().collect();
        let mut now = at(day(0), hm(8, 0));
        for (which, op) in ops {
            let id = &ids[which];
            let _ = match op {
                Op::Notify => s.notify(id, now),
                Op::Snooze(m) => s.apply_replan(&ReplanRequest { action_id: id.clone(), participant: "P1".into(), op: ReplanOp::Snooze { minutes: m }, requested_at: now }).map(|_| ()),
                Op::Skip => s.apply_replan(&ReplanRequest { action_id: id.clone(), participant: "P1".into(), op: ReplanOp::Skip, requested_at: now }).map(|_| ()),
                Op::Move(m) => s.apply_replan(&ReplanRequest { action_id: id.clone(), participant: "P1".into(), op: ReplanOp::Move { new_time: at(day(0), clock(m)) }, requested_at: now }).map(|_| ()),
                Op::Answer(d) => s.record_outcome(id, OutcomeKind::Answered { at: now + Duration::minutes(i64::from(d)) }, now).map(|_| ()),
                Op::Tick(d) => {
                    now += Duration::minutes(i64::from(d));
                    for ev in s.sweep(now) { s.apply_sweep_event(&ev).unwrap(); }
                    Ok(())
                }
            };
        }
        for a in s.actions.values() {
            let mut prev = ActionState::Pending;
            let mut last = None;
            for t in &a.history {
                prop_assert!(allowed(&prev, &t.state), "{:?} -> {:?}", prev, t.state);
                if let Some(l) = last { prop_assert!(t.at >= l); }
                last = Some(t.at);
                prev = t.state.clone();
            }
            prop_assert_eq!(&prev, &a.state);
        }
    }

    #[test]
    fn expansion_passes_the_verifier(
        times in proptest::collection::vec((0u32..1440, -2i32..3), 1..8),
        gap in 0u32..120,
        cap in 0u32..6,
        quiet in proptest::option::of((0u32..1440, 0u32..1440)),
        windows in proptest::collection::vec((0u32..3, 0u32..1380, 1u32..600, 0.0f64..1.0), 0..5),
    ) {
        let templates: Vec<TaskTemplate> = times.iter().enumerate().map(|(i, (m, pr))| question(&format!("t{i}"), &[clock(*m)], *pr)).collect();
        let mut p = plan(templates, 3, gap, cap);
        p.constraints.quiet_hours = quiet.map(|(a, b)| DailyInterval::new(clock(a), clock(b)));
        let avoid: Vec<AvoidWindow> = windows.iter().map(|(d, s, len, c)| window(day(*d), clock(*s), clock((*s + *len).min(1439)), *c)).filter(|w| w.is_valid()).collect();
        let e = expand(&p, &avoid);
        prop_assert!(check_expansion(&p, "P1", &avoid, 0.6, &e.actions).is_empty());
        prop_assert_eq!(&e, &expand(&p, &avoid));
        // each placed question sits at the earliest feasible minute given the earlier placements
        let _ = time_minutes;
    }
}
