use chrono::{Duration, NaiveDate};
use proptest::prelude::*;

use super::*;
use crate::time::{at, clock};

fn ts(minute: u32) -> Timestamp {
    at(NaiveDate::from_ymd_opt(2024, 3, 5).unwrap(), clock(minute))
}

fn figure_two_answers() -> DiaryAnswerSet {
    DiaryAnswerSet {
        what: Some("discussion".into()),
        location: Some("sitting room".into()),
        mood: Some("happy".into()),
        objects: vec!["dining table".into(), "book".into()],
        who: vec!["Peter".into()],
        notified_at: Some(ts(16 * 60)),
        answered_at: Some(ts(16 * 60 + 4)),
    }
}

fn names<'a>(v: &DimensionValue<'a>) -> Vec<&'a str> {
    match v {
        DimensionValue::Entities(es) => es.iter().filter_map(|e| e.name()).collect(),
        DimensionValue::Mood(m) => m.iter().copied().collect(),
    }
}

#[test]
fn discussion_in_sitting_room_example() {
    let vocab = Vocabulary::default();
    let s = build_snapshot(&vocab, "P001", ts(16 * 60), &figure_two_answers(), None).unwrap();
    assert!(s.graph.entities.len() >= 5);
    let room = s.we.clone().unwrap();
    let home = term_id("Home", "home");
    let act = s.wa.clone().unwrap();
    let has = |a: &str, p: Predicate, b: &str| s.graph.relations.contains(&Relation::new(a, p, b));
    assert!(has(&room, Predicate::PartOf, &home));
    assert!(has(&room, Predicate::HasActivity, &act));
    assert!(has(&term_id("Person", "Peter"), Predicate::In, &room));
    assert!(has(&term_id("Table", "dining table"), Predicate::In, &room));
    assert!(has(&s.me, Predicate::In, &room));
    let me = s.graph.entity(&s.me).unwrap();
    assert_eq!(me.attributes["Mood"], AttributeValue::text("happy"));
    assert_eq!(me.attributes["Class"], AttributeValue::text("Person"));
    assert!(me.attributes.contains_key("NotificationTime"));
    assert!(me.attributes.contains_key("AnswerTime"));
    assert_eq!(names(&query_dimension(&s, Dimension::WU)), ["Peter"]);
    assert_eq!(names(&query_dimension(&s, Dimension::WO)), ["dining table", "book"]);
    assert_eq!(names(&query_dimension(&s, Dimension::WI)), ["happy"]);
    assert!(validate_snapshot(&s, Some(&vocab)).is_valid());
}

#[test]
fn empty_answers_yield_only_me() {
    let s = build_snapshot(&Vocabulary::default(), "P001", ts(600), &DiaryAnswerSet::default(), None).unwrap();
    assert_eq!(s.graph.entities.len(), 1);
    assert!(s.graph.relations.is_empty());
    assert!(s.wo.is_empty() && s.wu.is_empty());
    assert_eq!(query_dimension(&s, Dimension::WO), DimensionValue::Entities(vec![]));
}

#[test]
fn home_with_geo_reading_gets_position() {
    let answers = DiaryAnswerSet { location: Some("home".into()), ..Default::default() };
    let batch = SensorBatch::new("P001", vec![SensorReading::geo(ts(600), 46.07, 11.12)]);
    let s = build_snapshot(&Vocabulary::default(), "P001", ts(600), &answers, Some(&batch)).unwrap();
    let home = s.graph.entity(s.we.as_ref().unwrap()).unwrap();
    assert_eq!(home.position(), Some((46.07, 11.12)));
}

#[test]
fn geo_goes_to_location_chain_root() {
    let vocab = Vocabulary::default();
    let s = build_snapshot(&vocab, "P001", ts(600), &figure_two_answers(), None).unwrap();
    let batch = SensorBatch::new("P001", vec![SensorReading::geo(ts(605), 46.07, 11.12)]);
    let a = annotate_with_sensors(&s, &batch, Duration::minutes(15));
    assert_eq!(a.ignored, 0);
    assert_eq!(a.snapshot.graph.entity(&term_id("Home", "home")).unwrap().position(), Some((46.07, 11.12)));
    assert_eq!(a.snapshot.graph.entity(s.we.as_ref().unwrap()).unwrap().position(), None);
}

#[test]
fn empty_batch_is_identity() {
    let s = build_snapshot(&Vocabulary::default(), "P001", ts(600), &figure_two_answers(), None).unwrap();
    let a = annotate_with_sensors(&s, &SensorBatch::new("P001", vec![]), Duration::minutes(15));
    assert_eq!(a.snapshot, s);
    assert_eq!(a.ignored, 0);
}

#[test]
fn nearest_geo_reading_wins() {
    let answers = DiaryAnswerSet { location: Some("home".into()), ..Default::default() };
    let s = build_snapshot(&Vocabulary::default(), "P001", ts(600), &answers, None).unwrap();
    let readings = vec![
        SensorReading::geo(ts(590), 1.0, 1.0),
        SensorReading::geo(ts(604), 2.0, 2.0),
        SensorReading::geo(ts(612), 3.0, 3.0),
    ];
    // oracle: smallest absolute distance to the snapshot time
    let best = readings.iter().min_by_key(|r| (r.at - ts(600)).num_seconds().abs()).unwrap();
    let SensorValue::Geo { latitude, longitude } = best.value else { unreachable!() };
    let a = annotate_with_sensors(&s, &SensorBatch::new("P001", readings.clone()), Duration::minutes(15));
    assert_eq!(a.snapshot.graph.entity(s.we.as_ref().unwrap()).unwrap().position(), Some((latitude, longitude)));
}

#[test]
fn readings_outside_window_are_ignored_and_counted() {
    let answers = DiaryAnswerSet { location: Some("home".into()), ..Default::default() };
    let s = build_snapshot(&Vocabulary::default(), "P001", ts(600), &answers, None).unwrap();
    let batch = SensorBatch::new("P001", vec![SensorReading::geo(ts(700), 1.0, 1.0)]);
    let a = annotate_with_sensors(&s, &batch, Duration::minutes(15));
    assert_eq!(a.snapshot, s);
    assert_eq!(a.ignored, 1);
}

#[test]
fn accelerometer_and_app_usage_summaries_on_me() {
    let s = build_snapshot(&Vocabulary::default(), "P001", ts(600), &DiaryAnswerSet::default(), None).unwrap();
    let batch = SensorBatch::new(
        "P001",
        vec![
            SensorReading { at: ts(600), value: SensorValue::Accelerometer { x: 3.0, y: 4.0, z: 0.0 } },
            SensorReading { at: ts(601), value: SensorValue::Accelerometer { x: 0.0, y: 0.0, z: 1.0 } },
            SensorReading { at: ts(602), value: SensorValue::AppUsage { app: "chat".into(), seconds: 30.0 } },
            SensorReading { at: ts(603), value: SensorValue::AppUsage { app: "video".into(), seconds: 20.0 } },
            SensorReading { at: ts(604), value: SensorValue::AppUsage { app: "video".into(), seconds: 20.0 } },
        ],
    );
    let a = annotate_with_sensors(&s, &batch, Duration::minutes(15));
    let me = a.snapshot.graph.entity(&s.me).unwrap();
    assert_eq!(me.attributes["Acceleration"], AttributeValue::number(3.0, Some("m/s^2")));
    assert_eq!(me.attributes["AppUsage"], AttributeValue::text("video"));
    assert_eq!(me.attributes["AppUsageSeconds"], AttributeValue::number(70.0, Some("s")));
}

#[test]
fn unknown_term_names_the_field() {
    let vocab = Vocabulary::default();
    let answers = DiaryAnswerSet { location: Some("moon".into()), ..Default::default() };
    let err = build_snapshot(&vocab, "P001", ts(600), &answers, None).unwrap_err();
    assert_eq!(err.field(), Some("where"));
    let answers = DiaryAnswerSet { who: vec!["Nobody".into()], ..Default::default() };
    assert_eq!(build_snapshot(&vocab, "P001", ts(600), &answers, None).unwrap_err().field(), Some("who"));
}

#[test]
fn missing_participant_rejected() {
    let err = build_snapshot(&Vocabulary::default(), " ", ts(600), &DiaryAnswerSet::default(), None).unwrap_err();
    assert_eq!(err, ContextError::MissingParticipant);
}

#[test]
fn mood_outside_vocabulary_is_reported() {
    let mut s = build_snapshot(&Vocabulary::default(), "P001", ts(600), &DiaryAnswerSet::default(), None).unwrap();
    s.wi = Some("ecstatic".into());
    assert_eq!(validate_snapshot(&s, Some(&Vocabulary::default())).invalid_mood.as_deref(), Some("ecstatic"));
}

#[test]
fn repeated_answers_give_identical_graphs() {
    let vocab = Vocabulary::default();
    let a = build_snapshot(&vocab, "P001", ts(600), &figure_two_answers(), None).unwrap();
    let b = build_snapshot(&vocab, "P001", ts(600), &figure_two_answers(), None).unwrap();
    assert_eq!(to_document(&a), to_document(&b));
}

pub(crate) fn answers_strategy() -> impl Strategy<Value = DiaryAnswerSet> {
    let v = Vocabulary::default();
    let acts: Vec<String> = v.activities.iter().map(|t| t.name.clone()).collect();
    let locs: Vec<String> = v.locations.iter().map(|t| t.name.clone()).collect();
    let moods = v.moods.clone();
    let objs: Vec<String> = v.objects.iter().map(|t| t.name.clone()).collect();
    let pers: Vec<String> = v.persons.iter().map(|t| t.name.clone()).collect();
    (
        proptest::option::of(proptest::sample::select(acts)),
        proptest::option::of(proptest::sample::select(locs)),
        proptest::option::of(proptest::sample::select(moods)),
        proptest::collection::vec(proptest::sample::select(objs), 0..4),
        proptest::collection::vec(proptest::sample::select(pers), 0..4),
    )
        .prop_map(|(what, location, mood, objects, who)| DiaryAnswerSet {
            what,
            location,
            mood,
            objects,
            who,
            notified_at: None,
            answered_at: None,
        })
}

proptest! {
    #[test]
    fn valid_answers_build_valid_graphs(answers in answers_strategy(), lat in -90.0f64..=90.0, lon in -180.0f64..=180.0) {
        let vocab = Vocabulary::default();
        let batch = SensorBatch::new("P9", vec![SensorReading::geo(ts(600), lat, lon)]);
        let s = build_snapshot(&vocab, "P9", ts(600), &answers, Some(&batch)).unwrap();
        let report = validate_snapshot(&s, Some(&vocab));
        prop_assert!(report.is_valid(), "{:?}", report);
        let back = from_document(&to_document(&s)).unwrap();
        prop_assert_eq!(&back, &s);
        let wo: Vec<&str> = match query_dimension(&s, Dimension::WO) {
            DimensionValue::Entities(es) => es.iter().map(|e| e.id.as_str()).collect(),
            _ => unreachable!(),
        };
        prop_assert_eq!(wo, s.wo.iter().map(String::as_str).collect::<Vec<_>>());
    }
}
