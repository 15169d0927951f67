use chrono::{Duration, NaiveDate, NaiveTime};
use serde_json::{json, Value};

use super::*;
use crate::time::at;

const R: &str = "researcher-token";

fn day(n: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 3, 4).unwrap() + Duration::days(n)
}

fn t(d: i64, h: u32, m: u32) -> Timestamp {
    at(day(d), NaiveTime::from_hms_opt(h, m, 0).unwrap())
}

fn plan_doc(days: i64) -> Value {
    json!({
        "id": "study",
        "researcher": "r1",
        "start": day(0),
        "end": day(days),
        "templates": [
            { "id": "what", "kind": "question", "question": "what",
              "recurrence": { "type": "daily", "times": ["10:00:00", "14:00:00", "18:00:00"] },
              "validity_minutes": 60 },
            { "id": "geo", "kind": "sensor", "sensor": "geo",
              "recurrence": { "type": "every", "minutes": 60 }, "validity_minutes": 15 }
        ],
        "constraints": { "min_gap_minutes": 30, "max_daily_questions": 10 }
    })
}

fn call(s: &mut Service, req: ApiRequest) -> ApiResponse {
    s.handle(&req)
}

/// A service with the plan and participants `ids` enrolled; returns their tokens.
fn setup(ids: &[&str], days: i64) -> (Service, Vec<String>) {
    let mut s = Service::in_memory(ServiceConfig::default());
    let r = call(&mut s, ApiRequest::post("/plans", plan_doc(days)).token(R).at(t(-1, 9, 0)));
    assert_eq!(r.status, 201, "{:?}", r.body);
    let tokens = ids
        .iter()
        .map(|id| {
            let r = call(&mut s, ApiRequest::post("/participants", json!({ "id": id })).token(R).at(t(-1, 9, 0)));
            assert_eq!(r.status, 201, "{:?}", r.body);
            r.data()["token"].as_str().unwrap().to_string()
        })
        .collect();
    (s, tokens)
}

fn tasks(s: &mut Service, id: &str, token: &str, now: Timestamp) -> Vec<Value> {
    let r = call(s, ApiRequest::get(&format!("/participants/{id}/tasks")).token(token).query("now", now.to_rfc3339()));
    assert_eq!(r.status, 200, "{:?}", r.body);
    r.data()["tasks"].as_array().unwrap().clone()
}

fn answer(s: &mut Service, token: &str, action: &str, what: &str, now: Timestamp) -> ApiResponse {
    let body = json!({ "action_id": action, "answers": { "what": what, "where": "classroom", "mood": "happy" } });
    call(s, ApiRequest::post("/answers", body).token(token).at(now))
}

fn question_id(tasks: &[Value]) -> String {
    tasks.iter().find(|a| a["kind"] == "question").unwrap()["id"].as_str().unwrap().to_string()
}

#[test]
fn responses_carry_schema_version() {
    let (mut s, _) = setup(&["P1"], 2);
    let r = call(&mut s, ApiRequest::get("/plans").token(R).at(t(0, 8, 0)));
    assert_eq!(r.body["schema_version"], API_SCHEMA_VERSION);
    let r = call(&mut s, ApiRequest::get("/nope").token(R).at(t(0, 8, 0)));
    assert_eq!(r.status, 404);
    assert_eq!(r.body["schema_version"], API_SCHEMA_VERSION);
}

#[test]
fn role_gates() {
    let (mut s, tok) = setup(&["P1", "P2"], 2);
    let now = t(0, 8, 0);
    assert_eq!(call(&mut s, ApiRequest::get("/plans").at(now)).status, 401);
    assert_eq!(call(&mut s, ApiRequest::get("/plans").token("bogus").at(now)).status, 401);
    assert_eq!(call(&mut s, ApiRequest::get("/plans").token(&tok[0]).at(now)).status, 401);
    assert_eq!(call(&mut s, ApiRequest::get("/participants/P2/tasks").token(&tok[0]).at(now)).status, 401);
    assert_eq!(call(&mut s, ApiRequest::get("/goals").token(R).at(now)).status, 401);
    assert_eq!(call(&mut s, ApiRequest::get("/goals").token(&tok[0]).at(now)).status, 200);
    assert_eq!(call(&mut s, ApiRequest::get("/schema")).status, 200);
}

#[test]
fn participant_tokens_are_stable_and_distinct() {
    let cfg = ServiceConfig::default();
    assert_eq!(cfg.participant_token("P1"), cfg.participant_token("P1"));
    assert_ne!(cfg.participant_token("P1"), cfg.participant_token("P2"));
    assert_ne!(cfg.participant_token("P1"), cfg.researcher_token);
}

#[test]
fn second_task_poll_at_same_instant_is_empty() {
    let (mut s, tok) = setup(&["P1"], 2);
    let first = tasks(&mut s, "P1", &tok[0], t(0, 10, 0));
    assert_eq!(first.len(), 2);
    assert!(first.iter().all(|a| a["state"]["state"] == "notified"));
    assert!(tasks(&mut s, "P1", &tok[0], t(0, 10, 0)).is_empty());
}

#[test]
fn full_loop_shows_one_answer_in_summary() {
    let (mut s, tok) = setup(&["P1"], 2);
    let q = question_id(&tasks(&mut s, "P1", &tok[0], t(0, 10, 0)));
    let r = answer(&mut s, &tok[0], &q, "lecture", t(0, 10, 7));
    assert_eq!(r.status, 201, "{:?}", r.body);
    assert_eq!(r.data()["delay_minutes"], 7.0);
    let r = call(&mut s, ApiRequest::get("/dashboard/summary").token(R).at(t(0, 10, 30)));
    assert_eq!(r.status, 200);
    assert_eq!(r.data()["totals"]["answered"], 1);
    assert_eq!(r.data()["totals"]["sent"], 1);
    assert_eq!(s.ltm().answers_of("P1").count(), 1);
    let snapshots = s.ltm().records().iter().filter(|r| matches!(r.payload, LtmPayload::Snapshot(_))).count();
    assert_eq!(snapshots, 1);
}

#[test]
fn repeated_answer_is_idempotent_and_conflicting_answer_is_rejected() {
    let (mut s, tok) = setup(&["P1"], 2);
    let q = question_id(&tasks(&mut s, "P1", &tok[0], t(0, 10, 0)));
    assert_eq!(answer(&mut s, &tok[0], &q, "lecture", t(0, 10, 5)).status, 201);
    let n = s.ltm().len();
    let again = answer(&mut s, &tok[0], &q, "lecture", t(0, 10, 6));
    assert_eq!(again.status, 200);
    assert_eq!(again.data()["replayed"], true);
    assert_eq!(s.ltm().len(), n);
    let other = answer(&mut s, &tok[0], &q, "eating", t(0, 10, 6));
    assert_eq!(other.status, 409);
}

#[test]
fn answer_after_expiry_is_409_with_terminal_state() {
    let (mut s, tok) = setup(&["P1"], 2);
    let q = question_id(&tasks(&mut s, "P1", &tok[0], t(0, 10, 0)));
    let r = answer(&mut s, &tok[0], &q, "lecture", t(0, 11, 1));
    assert_eq!(r.status, 409, "{:?}", r.body);
    assert_eq!(r.body["error"]["state"], "expired");
}

#[test]
fn unknown_term_is_422_naming_the_field() {
    let (mut s, tok) = setup(&["P1"], 2);
    let q = question_id(&tasks(&mut s, "P1", &tok[0], t(0, 10, 0)));
    let r = answer(&mut s, &tok[0], &q, "juggling", t(0, 10, 5));
    assert_eq!(r.status, 422);
    assert_eq!(r.body["error"]["field"], "what");
}

#[test]
fn unknown_ids_are_404() {
    let (mut s, tok) = setup(&["P1"], 2);
    assert_eq!(answer(&mut s, &tok[0], "nope", "lecture", t(0, 10, 5)).status, 404);
    assert_eq!(call(&mut s, ApiRequest::get("/participants/ghost/tasks").token(R).at(t(0, 10, 0))).status, 404);
}

#[test]
fn missing_clock_is_422() {
    let (mut s, tok) = setup(&["P1"], 2);
    let r = call(&mut s, ApiRequest::get("/participants/P1/tasks").token(&tok[0]));
    assert_eq!(r.status, 422);
}

#[test]
fn snooze_moves_due_time_and_redelivers() {
    let (mut s, tok) = setup(&["P1"], 2);
    let q = question_id(&tasks(&mut s, "P1", &tok[0], t(0, 10, 0)));
    let body = json!({ "action_id": q, "op": "snooze", "minutes": 30 });
    let r = call(&mut s, ApiRequest::post("/replan", body).token(&tok[0]).at(t(0, 10, 2)));
    assert_eq!(r.status, 200, "{:?}", r.body);
    assert_eq!(r.data()["state"]["state"], "snoozed");
    assert!(tasks(&mut s, "P1", &tok[0], t(0, 10, 31)).iter().all(|a| a["id"] != q.as_str()));
    let later = tasks(&mut s, "P1", &tok[0], t(0, 10, 32));
    assert!(later.iter().any(|a| a["id"] == q.as_str()));
}

#[test]
fn sensor_batches_deduplicate_and_annotate_snapshots() {
    let (mut s, tok) = setup(&["P1"], 2);
    let q = question_id(&tasks(&mut s, "P1", &tok[0], t(0, 10, 0)));
    answer(&mut s, &tok[0], &q, "lecture", t(0, 10, 5));
    let batch = json!({ "participant": "P1", "readings": [
        { "at": t(0, 10, 4), "value": { "kind": "geo", "latitude": 46.07, "longitude": 11.12 } }
    ]});
    let r = call(&mut s, ApiRequest::post("/sensors/batch", batch.clone()).token(&tok[0]).at(t(0, 10, 6)));
    assert_eq!(r.status, 201, "{:?}", r.body);
    assert_eq!(r.data()["snapshots_annotated"], 1);
    let r = call(&mut s, ApiRequest::post("/sensors/batch", batch).token(&tok[0]).at(t(0, 10, 7)));
    assert_eq!(r.status, 200);
    assert_eq!(r.data()["duplicate"], true);
}

#[test]
fn participant_compare_anonymizes_others() {
    let (mut s, tok) = setup(&["P1", "P2", "P3"], 3);
    let r = call(&mut s, ApiRequest::get("/dashboard/compare").token(&tok[1]).query("metric", "answered").at(t(2, 20, 0)));
    assert_eq!(r.status, 200, "{:?}", r.body);
    let names: Vec<&str> =
        r.data()["comparison"]["series"].as_array().unwrap().iter().map(|s| s["participant"].as_str().unwrap()).collect();
    assert_eq!(names, ["P1", "you", "P2"]);
    assert_eq!(r.data()["highlight"], "you");
    assert_eq!(r.data()["comparison"]["days"], 3);
}

#[test]
fn goals_crud_and_progress() {
    let (mut s, tok) = setup(&["P1"], 3);
    let body = json!({ "metric": "answers_per_day", "target": 2.0, "window_days": 1 });
    let r = call(&mut s, ApiRequest::post("/goals", body).token(&tok[0]).at(t(0, 9, 0)));
    assert_eq!(r.status, 201, "{:?}", r.body);
    let id = r.data()["id"].as_str().unwrap().to_string();
    for (h, m) in [(10, 0), (14, 0)] {
        let q = question_id(&tasks(&mut s, "P1", &tok[0], t(0, h, m)));
        answer(&mut s, &tok[0], &q, "eating", t(0, h, m + 3));
    }
    let r = call(&mut s, ApiRequest::get(&format!("/goals/{id}/progress")).token(&tok[0]).at(t(0, 20, 0)));
    assert_eq!(r.status, 200, "{:?}", r.body);
    assert_eq!(r.data()["value"], 2.0);
    assert_eq!(r.data()["on_track"], true);
    let put = ApiRequest::new(Method::Put, &format!("/goals/{id}")).token(&tok[0]).body(json!({ "target": 4.0 })).at(t(0, 20, 1));
    assert_eq!(call(&mut s, put).data()["target"], 4.0);
    let bad = json!({ "metric": "sensor_coverage", "target": 3.0 });
    assert_eq!(call(&mut s, ApiRequest::post("/goals", bad).token(&tok[0]).at(t(0, 20, 2))).status, 422);
    let del = ApiRequest::new(Method::Delete, &format!("/goals/{id}")).token(&tok[0]).at(t(0, 20, 3));
    assert_eq!(call(&mut s, del).status, 200);
    let get = ApiRequest::get(&format!("/goals/{id}")).token(&tok[0]).at(t(0, 20, 4));
    assert_eq!(call(&mut s, get).status, 404);
}

#[test]
fn tick_expires_and_alerts_list() {
    let (mut s, tok) = setup(&["P1"], 2);
    tasks(&mut s, "P1", &tok[0], t(0, 10, 0));
    let r = call(&mut s, ApiRequest::post("/tick", json!({})).token(R).at(t(0, 11, 30)));
    assert_eq!(r.status, 200);
    let actions = call(&mut s, ApiRequest::get("/participants/P1/actions").token(R).query("state", "expired").at(t(0, 11, 31)));
    let expired: Vec<_> = actions.data().as_array().unwrap().iter().filter(|a| a["kind"] == "question").collect();
    assert_eq!(expired.len(), 1);
    assert_eq!(call(&mut s, ApiRequest::get("/alerts").token(R).at(t(1, 12, 0))).status, 200);
}

/// Six days of answers: lectures at 10:00, free time otherwise.
fn answered_week() -> (Service, Vec<String>) {
    let (mut s, tok) = setup(&["P1", "P2"], 8);
    for d in 0..6 {
        for h in [10, 14, 18] {
            for (i, tk) in tok.iter().enumerate() {
                let p = format!("P{}", i + 1);
                let ts = tasks(&mut s, &p, tk, t(d, h, 0));
                assert!(ts.iter().any(|a| a["kind"] == "question"), "{d} {h} {p} {ts:?}");
                let q = question_id(&ts);
                let what = if h == 10 { "lecture" } else { "free_time" };
                assert!(answer(&mut s, tk, &q, what, t(d, h, 4)).is_success());
            }
        }
    }
    (s, tok)
}

#[test]
fn training_publishes_windows() {
    let (mut s, tok) = answered_week();
    let body = json!({ "family": "logistic_regression" });
    let r = call(&mut s, ApiRequest::post("/scheduler/train", body).token(R).at(t(6, 0, 5)));
    assert_eq!(r.status, 200, "{:?}", r.body);
    assert_eq!(r.data()["examples"], 36);
    assert!(s.model().is_some());
    let r = call(&mut s, ApiRequest::get("/participants/P1/avoid-windows").token(&tok[0]).query("date", day(6)).at(t(6, 0, 6)));
    let windows = r.data()["windows"].as_array().unwrap();
    assert!(!windows.is_empty(), "{:?}", r.body);
    let covers_ten = windows.iter().any(|w| w["start"].as_str().unwrap() <= "10:00:00" && w["end"].as_str().unwrap() > "10:00:00");
    assert!(covers_ten, "{windows:?}");
}

#[test]
fn reopening_a_data_directory_restores_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig::default();
    let tok;
    let q;
    {
        let mut s = Service::open(dir.path(), cfg.clone()).unwrap();
        assert_eq!(call(&mut s, ApiRequest::post("/plans", plan_doc(2)).token(R).at(t(-1, 9, 0))).status, 201);
        let r = call(&mut s, ApiRequest::post("/participants", json!({ "id": "P1" })).token(R).at(t(-1, 9, 0)));
        tok = r.data()["token"].as_str().unwrap().to_string();
        q = question_id(&tasks(&mut s, "P1", &tok, t(0, 10, 0)));
        assert_eq!(answer(&mut s, &tok, &q, "lecture", t(0, 10, 3)).status, 201);
    }
    let mut s = Service::open(dir.path(), cfg).unwrap();
    assert_eq!(s.stm().schedule().actions[&q].state.name(), "answered");
    assert_eq!(s.ltm().answers_of("P1").count(), 1);
    assert!(tasks(&mut s, "P1", &tok, t(0, 10, 4)).is_empty());
}


#[test]
fn split_training_matches_the_endpoint() {
    let req = |token: &str| ApiRequest::post("/scheduler/train", json!({ "family": "gaussian_nb" })).token(token).at(t(6, 0, 5));
    let (mut direct, _) = answered_week();
    let expected = call(&mut direct, req(R));
    let (mut split, tok) = answered_week();
    assert!(req(R).is_training());
    assert_eq!(split.begin_training(&req(&tok[0])).unwrap_err().status, 401);
    let (job, now) = split.begin_training(&req(R)).unwrap();
    let r = split.finish_training(job.run(), now);
    assert_eq!(r, expected);
    assert_eq!(split.model(), direct.model());
}
