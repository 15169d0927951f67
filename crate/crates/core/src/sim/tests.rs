use chrono::Timelike;

use super::*;
use crate::service::{Service, ServiceConfig};
use crate::store::SyncPolicy;
use crate::time::at;

fn service() -> Service {
    Service::in_memory(ServiceConfig { sync: SyncPolicy::OsBuffered, ..ServiceConfig::default() })
}

fn small(size: usize, days: u32) -> CohortConfig {
    CohortConfig { size, days, ..CohortConfig::default() }
}

fn run(cohort: &CohortConfig, profiles: &[BehaviorProfile], policy: Policy) -> ExperimentResult {
    let plan = demo_plan(cohort.start, cohort.days.max(1));
    run_experiment(cohort, profiles, &plan, &SimConfig::with_policy(policy), service()).unwrap()
}

#[test]
fn empty_cohort() {
    assert!(generate_cohort(&small(0, 7)).is_empty());
}

#[test]
fn cohort_is_deterministic() {
    assert_eq!(generate_cohort(&small(5, 7)), generate_cohort(&small(5, 7)));
    let other = CohortConfig { seed: 1, ..small(5, 7) };
    assert_ne!(generate_cohort(&small(5, 7)), generate_cohort(&other));
}

#[test]
fn reference_cohort_satisfies_invariants() {
    let cohort = generate_cohort(&CohortConfig::default());
    assert_eq!(cohort.len(), 40);
    let ids: BTreeSet<&str> = cohort.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids.len(), 40);
    for p in &cohort {
        assert!(p.violations().is_empty(), "{}: {:?}", p.id, p.violations());
        assert!(p.timetable.iter().any(|e| e.activity == "lecture"));
    }
}

#[test]
fn invariant_checker_flags_overlap_and_busy_above_base() {
    let mut p = generate_profile(&CohortConfig::default(), 0);
    p.busy_answer = p.base_answer;
    let mut dup = p.timetable[0].clone();
    dup.start = dup.start + Duration::minutes(30);
    dup.end = dup.end + Duration::minutes(30);
    p.timetable.push(dup);
    let v = p.violations();
    assert!(v.contains(&ProfileViolation::BusyNotBelowBase));
    assert!(v.iter().any(|x| matches!(x, ProfileViolation::Overlap { .. })));
}

use std::collections::BTreeSet;

/// Background routine of the simulator, written out independently.
fn background(minute: u32) -> &'static str {
    match minute {
        m if m < 420 => "sleeping",
        m if (720..780).contains(&m) || (1140..1200).contains(&m) => "eating",
        _ => "free_time",
    }
}

#[test]
fn day_plans_follow_timetable_or_background() {
    let cfg = small(6, 14);
    let profiles = generate_cohort(&cfg);
    for (i, p) in profiles.iter().enumerate() {
        for d in 0..14 {
            let date = cfg.start + Duration::days(d);
            let plan = day_plan(&cfg, i, p, date);
            assert_eq!(plan.episodes.first().unwrap().start_minute, 0);
            assert_eq!(plan.episodes.last().unwrap().end_minute, 1440);
            for w in plan.episodes.windows(2) {
                assert_eq!(w[0].end_minute, w[1].start_minute);
            }
            let wd = date.weekday().num_days_from_monday();
            for m in (0..1440).step_by(10) {
                let ep = plan.at_minute(m);
                let entry = p.timetable.iter().find(|e| e.weekday == wd && e.minutes().0 <= m && m < e.minutes().1);
                match entry {
                    Some(e) => assert!(ep.activity == e.activity || ep.activity == background(m)),
                    None => assert_eq!(ep.activity, background(m)),
                }
            }
        }
    }
}

#[test]
fn zero_duration_produces_no_events() {
    let cfg = small(3, 0);
    let r = run(&cfg, &generate_cohort(&cfg), Policy::Fixed);
    assert!(r.events.is_empty());
}

#[test]
fn runs_are_deterministic() {
    let cfg = small(3, 2);
    let profiles = generate_cohort(&cfg);
    let a = run(&cfg, &profiles, Policy::Fixed);
    let b = run(&cfg, &profiles, Policy::Fixed);
    assert_eq!(a.events, b.events);
    assert!(!a.events.is_empty());
}

#[test]
fn exported_labels_match_timetable_oracle() {
    let cfg = small(5, 7);
    let profiles = generate_cohort(&cfg);
    let r = run(&cfg, &profiles, Policy::Fixed);
    let rows = r.export();
    assert!(rows.len() > 5 * 7 * 8);
    for row in rows {
        let p = profiles.iter().find(|p| p.id == row.participant).unwrap();
        let wd = row.at.weekday().num_days_from_monday();
        let m = row.at.hour() * 60 + row.at.minute();
        let entry = p.timetable.iter().find(|e| e.weekday == wd && e.minutes().0 <= m && m < e.minutes().1);
        let busy = ["lecture", "study_alone", "study_group"].contains(&row.activity.as_str());
        assert_eq!(row.label, u8::from(busy));
        match entry {
            Some(e) if row.label == 1 => assert_eq!(e.activity, row.activity),
            Some(_) => assert_eq!(row.activity, background(m)),
            None => {
                assert_eq!(row.label, 0);
                assert_eq!(row.activity, background(m));
            }
        }
    }
}

#[test]
fn activity_stream_does_not_depend_on_policy() {
    let cfg = small(4, 10);
    let profiles = generate_cohort(&cfg);
    let fixed = run(&cfg, &profiles, Policy::Fixed);
    let adaptive = run(&cfg, &profiles, Policy::Adaptive);
    assert!(!adaptive.trainings.is_empty());
    assert_eq!(fixed.activity_changes(), adaptive.activity_changes());
}

fn single(profile_edit: impl Fn(&mut BehaviorProfile)) -> (CohortConfig, Vec<BehaviorProfile>) {
    let cfg = CohortConfig { attendance: 1.0, ..small(1, 7) };
    let mut profiles = generate_cohort(&cfg);
    profile_edit(&mut profiles[0]);
    (cfg, profiles)
}

#[test]
fn never_answered_in_class_with_zero_busy_probability() {
    let (cfg, profiles) = single(|p| {
        p.busy_answer = 0.0;
        p.snooze = 0.0;
    });
    let r = run(&cfg, &profiles, Policy::Fixed);
    let busy_deliveries: BTreeSet<String> = r
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            SimEventKind::Notified { action_id, question: true } => {
                let plan = r.truth(&e.participant, e.at.date_naive()).unwrap();
                plan.at_minute(e.at.hour() * 60 + e.at.minute()).busy().then(|| action_id.clone())
            }
            _ => None,
        })
        .collect();
    assert!(!busy_deliveries.is_empty());
    for e in &r.events {
        if let SimEventKind::Answered { action_id, .. } = &e.kind {
            assert!(!busy_deliveries.contains(action_id));
        }
    }
}

#[test]
fn free_time_answer_after_one_minute_when_certain() {
    let (cfg, profiles) = single(|p| {
        p.base_answer = 1.0;
        p.delay_p = 1.0;
    });
    let r = run(&cfg, &profiles, Policy::Fixed);
    let notified: BTreeMap<&str, crate::time::Timestamp> = r
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            SimEventKind::Notified { action_id, question: true } => Some((action_id.as_str(), e.at)),
            _ => None,
        })
        .collect();
    let mut checked = 0;
    for e in &r.events {
        if let SimEventKind::Answered { action_id, answers } = &e.kind {
            if !["lecture", "study_alone", "study_group"].contains(&answers.what.as_deref().unwrap()) {
                assert_eq!(e.at - notified[action_id.as_str()], Duration::minutes(1));
                checked += 1;
            }
        }
    }
    assert!(checked > 20);
}

use std::collections::BTreeMap;

#[test]
fn in_class_answer_rate_tracks_busy_probability() {
    let cfg = CohortConfig { busy_answer: Span(0.3, 0.3), snooze: Span(0.0, 0.0), delay_p: Span(1.0, 1.0), ..small(20, 14) };
    let profiles = generate_cohort(&cfg);
    let r = run(&cfg, &profiles, Policy::Fixed);
    let mut busy_ids = BTreeSet::new();
    for e in &r.events {
        if let SimEventKind::Notified { action_id, question: true } = &e.kind {
            let plan = r.truth(&e.participant, e.at.date_naive()).unwrap();
            if plan.at_minute(e.at.hour() * 60 + e.at.minute()).busy() {
                busy_ids.insert(action_id.clone());
            }
        }
    }
    let answered = r
        .events
        .iter()
        .filter(|e| matches!(&e.kind, SimEventKind::Answered { action_id, .. } if busy_ids.contains(action_id)))
        .count();
    let rate = answered as f64 / busy_ids.len() as f64;
    assert!(busy_ids.len() > 300, "{}", busy_ids.len());
    assert!((rate - 0.3).abs() <= 0.05, "rate {rate}");
}

#[test]
fn geometric_delay_mean() {
    let mut rng = rng_for(&[1]);
    let n = 20_000;
    let mean = (0..n).map(|_| runner_delay(0.25, &mut rng) as f64).sum::<f64>() / f64::from(n);
    assert!((mean - 4.0).abs() < 0.15, "{mean}");
}

fn runner_delay(p: f64, rng: &mut ChaCha8Rng) -> i64 {
    runner::geometric_delay(p, rng)
}

#[test]
fn demo_plan_is_valid() {
    let plan = demo_plan(NaiveDate::from_ymd_opt(2024, 3, 4).unwrap(), 28);
    plan.validate().unwrap();
    let e = crate::plan::expand_plan(&plan, "S001", &[], Default::default()).unwrap();
    let questions = e.actions.iter().filter(|a| a.is_question()).count();
    assert_eq!(questions, 9 * 28);
    let first = e.actions.iter().filter(|a| a.is_question()).map(|a| a.due_time).min().unwrap();
    assert_eq!(first, at(plan.start, NaiveTime::from_hms_opt(8, 30, 0).unwrap()));
}
