//! Minute-by-minute simulation of a cohort talking to the service through its request API.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{day_plan, rng_for, BehaviorProfile, CohortConfig, DayPlan, Episode, STREAM_JITTER, STREAM_RESPONSE};
use crate::context::{SensorBatch, SensorReading};
use crate::ml::{Family, FeatureSchema, LabeledExample, LocationClusters};
use crate::plan::{ActionState, ExperimentPlan, ScheduledAction};
use crate::service::{ApiRequest, ApiResponse, Service};
use crate::time::{midnight, minute_of_day, Timestamp};
use crate::vocab::Vocabulary;
use crate::DiaryAnswerSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Questions at their planned times.
    Fixed,
    /// After a warm-up, a weekly retrained model publishes daily avoid windows.
    Adaptive,
}

impl Policy {
    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(Value::String(s.to_string())).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub policy: Policy,
    pub warmup_days: u32,
    pub retrain_every_days: u32,
    pub family: Family,
    pub snooze_minutes: u32,
    /// Keep every event in memory. Metrics only need notifications.
    pub record_all_events: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            policy: Policy::Fixed,
            warmup_days: 7,
            retrain_every_days: 7,
            family: Family::RandomForest,
            snooze_minutes: 30,
            record_all_events: true,
        }
    }
}

impl SimConfig {
    pub fn with_policy(policy: Policy) -> Self {
        Self { policy, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimEventKind {
    ActivityChange { activity: String, location: String },
    Notified { action_id: String, question: bool },
    Answered { action_id: String, answers: DiaryAnswerSet },
    Snoozed { action_id: String },
    Ignored { action_id: String },
    SensorEmitted { batch: SensorBatch },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub at: Timestamp,
    pub participant: String,
    #[serde(flatten)]
    pub kind: SimEventKind,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{request} failed with {status}: {body}")]
    Api { request: String, status: u16, body: String },
    #[error("unexpected response to {0}")]
    Malformed(String),
}

#[derive(Debug, Clone)]
enum DeviceAction {
    Answer { action_id: String, answers: DiaryAnswerSet },
    Snooze { action_id: String },
}

/// Everything a run produced: the event stream, the service it drove, and the ground truth.
#[derive(Debug)]
pub struct ExperimentResult {
    pub cohort: CohortConfig,
    pub profiles: Vec<BehaviorProfile>,
    pub sim: SimConfig,
    pub events: Vec<SimEvent>,
    pub trainings: Vec<Value>,
    pub service: Service,
}

fn expect_ok(request: &str, r: ApiResponse) -> Result<ApiResponse, SimError> {
    if r.is_success() {
        Ok(r)
    } else {
        Err(SimError::Api { request: request.to_string(), status: r.status, body: r.body.to_string() })
    }
}

const FRIENDS: [&str; 4] = ["Peter", "Anna", "Marco", "Giulia"];

fn answers_for(profile: &BehaviorProfile, ep: &Episode, vocab: &Vocabulary, rng: &mut ChaCha8Rng) -> DiaryAnswerSet {
    let weights = if ep.busy() { &profile.mood_busy } else { &profile.mood_free };
    let mood = WeightedIndex::new(weights).ok().map(|w| vocab.moods[w.sample(rng).min(vocab.moods.len() - 1)].clone());
    let objects: Vec<String> = match ep.activity.as_str() {
        "lecture" => vec!["notebook".into()],
        "study_alone" | "study_group" => vec![if rng.gen_bool(0.5) { "book" } else { "laptop" }.into()],
        "eating" => vec!["plate".into()],
        "sleeping" => vec!["bed".into()],
        _ => vec!["phone".into()],
    };
    let who: Vec<String> = match (ep.activity.as_str(), ep.location.as_str()) {
        ("lecture" | "study_group", _) => vec!["classmates".into()],
        ("eating", "canteen") => vec![FRIENDS[rng.gen_range(0..FRIENDS.len())].into()],
        ("eating", _) if rng.gen_bool(0.4) => vec!["family".into()],
        (_, "outdoors") if rng.gen_bool(0.5) => vec![FRIENDS[rng.gen_range(0..FRIENDS.len())].into()],
        (_, "home") if rng.gen_bool(0.2) => vec!["roommate".into()],
        _ => Vec::new(),
    };
    DiaryAnswerSet {
        what: Some(ep.activity.clone()),
        location: Some(ep.location.clone()),
        mood,
        objects,
        who,
        notified_at: None,
        answered_at: None,
    }
}

/// Minutes until an answer: geometric on {1, 2, ...} with success probability `p`.
pub(crate) fn geometric_delay(p: f64, rng: &mut ChaCha8Rng) -> i64 {
    if p >= 1.0 {
        return 1;
    }
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    (u.ln() / (1.0 - p).ln()).floor() as i64 + 1
}

struct Device<'a> {
    index: usize,
    profile: &'a BehaviorProfile,
    token: String,
    rng: ChaCha8Rng,
    today: Option<DayPlan>,
    last_episode: Option<(String, String)>,
    queue: BTreeMap<(Timestamp, u64), DeviceAction>,
    seq: u64,
}

/// Run `profiles` through `plan` on `service` for the cohort's days, one simulated minute at a
/// time. Participants act in id order within each minute; all randomness comes from
/// substreams of the cohort seed, and the ground-truth activity stream never depends on the
/// policy.
pub fn run_experiment(
    cohort: &CohortConfig,
    profiles: &[BehaviorProfile],
    plan: &ExperimentPlan,
    sim: &SimConfig,
    mut service: Service,
) -> Result<ExperimentResult, SimError> {
    let researcher = service.config().researcher_token.clone();
    let vocab = service.config().vocabulary.clone();
    let start = midnight(cohort.start);
    let setup = start - Duration::hours(1);
    let mut events = Vec::new();
    let mut trainings = Vec::new();

    let plan_doc = serde_json::to_value(plan).expect("plan serializes");
    expect_ok("POST /plans", service.handle(&ApiRequest::post("/plans", plan_doc).token(&researcher).at(setup)))?;
    let mut order: Vec<usize> = (0..profiles.len()).collect();
    order.sort_by(|a, b| profiles[*a].id.cmp(&profiles[*b].id));
    let mut devices = Vec::with_capacity(profiles.len());
    for &i in &order {
        let p = &profiles[i];
        let body = json!({ "id": p.id, "attributes": {
            "gender": p.gender.to_string(),
            "department": p.department.to_string(),
            "extraversion": p.extraversion.to_string(),
        }});
        let r = expect_ok("POST /participants", service.handle(&ApiRequest::post("/participants", body).token(&researcher).at(setup)))?;
        let token = r.data()["token"].as_str().ok_or_else(|| SimError::Malformed("POST /participants".into()))?.to_string();
        devices.push(Device {
            index: i,
            profile: p,
            token,
            rng: rng_for(&[cohort.seed, STREAM_RESPONSE, i as u64]),
            today: None,
            last_episode: None,
            queue: BTreeMap::new(),
            seq: 0,
        });
    }

    let total_minutes = i64::from(cohort.days) * 1440;
    for step in 0..total_minutes {
        let now = start + Duration::minutes(step);
        let date = now.date_naive();
        let day_no = step / 1440;
        if sim.policy == Policy::Adaptive
            && step % 1440 == 0
            && day_no >= i64::from(sim.warmup_days)
            && (day_no - i64::from(sim.warmup_days)) % i64::from(sim.retrain_every_days.max(1)) == 0
        {
            let body = json!({ "family": sim.family });
            let r = service.handle(&ApiRequest::post("/scheduler/train", body).token(&researcher).at(now));
            let r = expect_ok("POST /scheduler/train", r)?;
            trainings.push(json!({ "at": now, "result": r.data() }));
        }
        let minute = minute_of_day(&now);
        for dev in &mut devices {
            let pid = dev.profile.id.clone();
            if dev.today.as_ref().is_none_or(|d| d.date != date) {
                dev.today = Some(day_plan(cohort, dev.index, dev.profile, date));
            }
            let ep = dev.today.as_ref().expect("set").at_minute(minute).clone();
            let key = (ep.activity.clone(), ep.location.clone());
            if dev.last_episode.as_ref() != Some(&key) {
                events.push(SimEvent {
                    at: now,
                    participant: pid.clone(),
                    kind: SimEventKind::ActivityChange { activity: ep.activity.clone(), location: ep.location.clone() },
                });
                dev.last_episode = Some(key);
            }

            while let Some(entry) = dev.queue.first_entry() {
                if entry.key().0 > now {
                    break;
                }
                match entry.remove() {
                    DeviceAction::Answer { action_id, answers } => {
                        let body = json!({ "action_id": action_id, "answers": answers });
                        let r = service.handle(&ApiRequest::post("/answers", body).token(&dev.token).at(now));
                        let kind = if r.is_success() {
                            SimEventKind::Answered { action_id, answers }
                        } else if r.status == 409 {
                            SimEventKind::Ignored { action_id }
                        } else {
                            return Err(SimError::Api { request: "POST /answers".into(), status: r.status, body: r.body.to_string() });
                        };
                        events.push(SimEvent { at: now, participant: pid.clone(), kind });
                    }
                    DeviceAction::Snooze { action_id } => {
                        let body = json!({ "action_id": action_id, "op": "snooze", "minutes": sim.snooze_minutes });
                        let r = service.handle(&ApiRequest::post("/replan", body).token(&dev.token).at(now));
                        let kind = if r.is_success() {
                            SimEventKind::Snoozed { action_id }
                        } else if r.status == 409 {
                            SimEventKind::Ignored { action_id }
                        } else {
                            return Err(SimError::Api { request: "POST /replan".into(), status: r.status, body: r.body.to_string() });
                        };
                        events.push(SimEvent { at: now, participant: pid.clone(), kind });
                    }
                }
            }

            let path = format!("/participants/{pid}/tasks");
            let r = expect_ok("GET tasks", service.handle(&ApiRequest::get(&path).token(&dev.token).at(now)))?;
            let tasks: Vec<ScheduledAction> = serde_json::from_value(r.data()["tasks"].clone())
                .map_err(|_| SimError::Malformed("GET tasks".into()))?;
            for task in tasks {
                events.push(SimEvent {
                    at: now,
                    participant: pid.clone(),
                    kind: SimEventKind::Notified { action_id: task.id.clone(), question: task.is_question() },
                });
                if !task.is_question() {
                    let mut jr = rng_for(&[cohort.seed, STREAM_JITTER, dev.index as u64, step as u64]);
                    let (lat, lon) = ep.position;
                    let reading = SensorReading::geo(now, lat + jr.gen_range(-1.5e-4..1.5e-4), lon + jr.gen_range(-1.5e-4..1.5e-4));
                    let batch = SensorBatch { participant: pid.clone(), action_id: Some(task.id.clone()), readings: vec![reading] };
                    let body = serde_json::to_value(&batch).expect("batch serializes");
                    expect_ok("POST /sensors/batch", service.handle(&ApiRequest::post("/sensors/batch", body).token(&dev.token).at(now)))?;
                    events.push(SimEvent { at: now, participant: pid.clone(), kind: SimEventKind::SensorEmitted { batch } });
                    continue;
                }
                let busy = ep.busy();
                let p_answer = match (busy, ep.activity.as_str()) {
                    (_, "sleeping") => 0.0,
                    (true, _) => dev.profile.busy_answer,
                    (false, _) => dev.profile.base_answer,
                };
                let u: f64 = dev.rng.gen();
                dev.seq += 1;
                if u < p_answer {
                    let delay = geometric_delay(dev.profile.delay_p, &mut dev.rng);
                    let answers = answers_for(dev.profile, &ep, &vocab, &mut dev.rng);
                    dev.queue.insert((now + Duration::minutes(delay), dev.seq), DeviceAction::Answer { action_id: task.id, answers });
                } else if busy && dev.rng.gen::<f64>() < dev.profile.snooze {
                    dev.queue.insert((now + Duration::minutes(1), dev.seq), DeviceAction::Snooze { action_id: task.id });
                } else {
                    events.push(SimEvent { at: now, participant: pid.clone(), kind: SimEventKind::Ignored { action_id: task.id } });
                }
            }
        }
    }
    if !sim.record_all_events {
        events.retain(|e| !matches!(e.kind, SimEventKind::SensorEmitted { .. }));
    }
    let _ = service.flush();
    Ok(ExperimentResult {
        cohort: cohort.clone(),
        profiles: order.iter().map(|&i| profiles[i].clone()).collect(),
        sim: sim.clone(),
        events,
        trainings,
        service,
    })
}

/// One exported notification with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub participant: String,
    pub at: Timestamp,
    pub activity: String,
    pub label: u8,
}

impl ExperimentResult {
    fn profile_index(&self, participant: &str) -> Option<usize> {
        self.profiles.iter().position(|p| p.id == participant)
    }

    /// Ground truth for a participant and day. The cohort index is the profile's position in
    /// the generated cohort, recovered from its id.
    pub fn truth(&self, participant: &str, date: NaiveDate) -> Option<DayPlan> {
        let i = self.profile_index(participant)?;
        let cohort_index = self.profiles[i].id.trim_start_matches('S').parse::<usize>().ok()?.checked_sub(1)?;
        Some(day_plan(&self.cohort, cohort_index, &self.profiles[i], date))
    }

    pub fn activity_changes(&self) -> Vec<&SimEvent> {
        self.events.iter().filter(|e| matches!(e.kind, SimEventKind::ActivityChange { .. })).collect()
    }

    /// Every delivery of a question, including re-deliveries after a snooze.
    pub fn question_notifications(&self) -> impl Iterator<Item = (&str, Timestamp)> {
        self.events.iter().filter_map(|e| match &e.kind {
            SimEventKind::Notified { question: true, .. } => Some((e.participant.as_str(), e.at)),
            _ => None,
        })
    }

    /// Ground-truth label of every question delivery.
    pub fn export(&self) -> Vec<ExportRow> {
        let vocab = &self.service.config().vocabulary;
        let mut cache: BTreeMap<(String, NaiveDate), DayPlan> = BTreeMap::new();
        self.question_notifications()
            .map(|(p, at)| {
                let plan = cache
                    .entry((p.to_string(), at.date_naive()))
                    .or_insert_with(|| self.truth(p, at.date_naive()).expect("known participant"));
                let ep = plan.at_minute(minute_of_day(&at));
                let label = vocab.encode_label(&ep.activity).expect("simulated activities are in the vocabulary");
                ExportRow { participant: p.to_string(), at, activity: ep.activity.clone(), label }
            })
            .collect()
    }

    /// Question deliveries made while the participant was busy.
    pub fn in_class_notifications(&self) -> usize {
        self.export().iter().filter(|r| r.label == 1).count()
    }

    /// Answered share of the questions delivered at least once.
    pub fn answered_rate(&self) -> f64 {
        let schedule = self.service.stm().schedule();
        let delivered: Vec<_> =
            schedule.actions.values().filter(|a| a.is_question() && a.first_notified().is_some()).collect();
        if delivered.is_empty() {
            return 0.0;
        }
        let answered = delivered.iter().filter(|a| matches!(a.state, ActionState::Answered { .. })).count();
        answered as f64 / delivered.len() as f64
    }

    /// Share of ground-truth busy minutes on days `from_day..` covered by the avoid windows
    /// published for that day. `None` when there are no busy minutes.
    pub fn window_coverage(&self, from_day: u32) -> Option<f64> {
        let schedule = self.service.stm().schedule();
        let (mut busy, mut covered) = (0u64, 0u64);
        for p in &self.profiles {
            for d in from_day..self.cohort.days {
                let date = self.cohort.start + Duration::days(i64::from(d));
                let windows = schedule.windows_for(&p.id, date);
                let truth = self.truth(&p.id, date).expect("known participant");
                for m in truth.busy_minutes() {
                    busy += 1;
                    covered += u64::from(windows.iter().any(|w| w.contains_minute(m)));
                }
            }
        }
        (busy > 0).then(|| covered as f64 / busy as f64)
    }

    /// A feature schema whose location clusters are fit on geo readings before `until`.
    pub fn feature_schema(&self, k: usize, radius_m: f64, until: Timestamp) -> FeatureSchema {
        let history = self.service.history();
        let clusters = LocationClusters::fit(&history.geo_points_before(until), k, radius_m);
        let mut schema = FeatureSchema::with_clusters(clusters);
        schema.moods = self.service.config().vocabulary.moods.clone();
        let statics: BTreeSet<String> = self
            .service
            .stm()
            .state()
            .participants
            .values()
            .flat_map(|p| p.attributes.keys().cloned())
            .collect();
        schema.static_slots = statics.into_iter().collect();
        schema
    }

    /// Exported rows as training examples, with features observable at each delivery.
    pub fn labeled_examples(&self, schema: &FeatureSchema) -> Vec<LabeledExample> {
        let history = self.service.history();
        self.export()
            .into_iter()
            .map(|r| LabeledExample {
                features: history.extract_features(&r.participant, r.at, schema),
                participant: r.participant,
                at: r.at,
                label: r.label,
            })
            .collect()
    }
}
