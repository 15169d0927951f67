//! The request/response API over the stores, planner, scheduler and monitoring.
//!
//! Transport-free: [`Service::handle`] maps an [`ApiRequest`] to an [`ApiResponse`]. The HTTP
//! server and the simulator both drive the same dispatcher.

mod api;
mod training;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

pub use api::{ApiError, ApiRequest, ApiResponse, Method, API_SCHEMA_VERSION};
pub use training::{TrainRequest, TrainingJob, TrainingResult};

use crate::context::{build_snapshot, SensorBatch, SensorValue, DEFAULT_SENSOR_WINDOW_MINUTES};
use crate::ids::derived_id;
use crate::ml::{derive_avoid_windows, HistoryIndex, TrainConfig, TrainedModel};
use crate::monitoring::AlertConfig;
use crate::plan::{
    expand_plan, ExpandOptions, ExperimentPlan, OutcomeKind, ReplanRequest, ScheduledAction, SweepEvent,
    DEFAULT_CONFIDENCE_THRESHOLD,
};
use crate::store::log::write_atomic;
use crate::store::{AnswerRecord, LtmPayload, LtmStore, Participant, StmPayload, StmStore, StoreError, SyncPolicy};
use crate::time::Timestamp;
use crate::vocab::Vocabulary;
use crate::DiaryAnswerSet;

pub const MODEL_FILE: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub researcher_token: String,
    /// Participant tokens are derived from this secret and the participant id.
    pub token_secret: String,
    /// Honor `now` fields sent by clients. Needed for simulated clocks.
    pub client_clock: bool,
    pub vocabulary: Vocabulary,
    pub alerts: AlertConfig,
    pub confidence_threshold: f64,
    pub slot_minutes: u32,
    pub tau: f64,
    pub sensor_window_minutes: i64,
    pub cluster_k: usize,
    pub cluster_radius_m: f64,
    pub train: TrainConfig,
    pub sync: SyncPolicy,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            researcher_token: "researcher-token".into(),
            token_secret: "change-me".into(),
            client_clock: true,
            vocabulary: Vocabulary::default(),
            alerts: AlertConfig::default(),
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            slot_minutes: crate::ml::DEFAULT_SLOT_MINUTES,
            tau: crate::ml::DEFAULT_TAU,
            sensor_window_minutes: DEFAULT_SENSOR_WINDOW_MINUTES,
            cluster_k: 6,
            cluster_radius_m: 150.0,
            train: TrainConfig::default(),
            sync: SyncPolicy::EveryAppend,
        }
    }
}

impl ServiceConfig {
    pub fn participant_token(&self, participant: &str) -> String {
        derived_id("pt-", &[&self.token_secret, participant])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TickReport {
    pub resumed: usize,
    pub expired: usize,
    pub skipped: usize,
    pub windows_published: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerReceipt {
    pub action_id: String,
    pub replayed: bool,
    pub delay_minutes: Option<f64>,
    pub answer_record: String,
    pub snapshot_record: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReceipt {
    pub record: String,
    pub duplicate: bool,
    pub snapshots_annotated: usize,
}

/// The live service: both stores, the derived history index and the current model.
#[derive(Debug)]
pub struct Service {
    pub(crate) cfg: ServiceConfig,
    pub(crate) stm: StmStore,
    pub(crate) ltm: LtmStore,
    pub(crate) history: HistoryIndex,
    pub(crate) model: Option<TrainedModel>,
    dir: Option<PathBuf>,
    refreshed: BTreeMap<String, NaiveDate>,
    last_tick: Option<Timestamp>,
    tokens: HashMap<String, String>,
}

impl Service {
    pub fn in_memory(cfg: ServiceConfig) -> Self {
        Self {
            cfg,
            stm: StmStore::in_memory(),
            ltm: LtmStore::in_memory(),
            history: HistoryIndex::default(),
            model: None,
            dir: None,
            refreshed: BTreeMap::new(),
            last_tick: None,
            tokens: HashMap::new(),
        }
    }

    /// Open (or create) a data directory, replaying both logs and loading the model file.
    pub fn open(dir: &Path, cfg: ServiceConfig) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir)?;
        let (mut stm, report) = StmStore::open(dir, cfg.sync)?;
        let (ltm, ltm_recovery) = LtmStore::open(dir, cfg.sync)?;
        if report.recovery.dropped_records + ltm_recovery.dropped_records > 0 {
            log::warn!(
                "dropped {} torn STM and {} torn LTM records on open",
                report.recovery.dropped_records,
                ltm_recovery.dropped_records
            );
        }
        stm.flush()?;
        let model_path = dir.join(MODEL_FILE);
        let model = if model_path.exists() {
            let doc = std::fs::read_to_string(&model_path)?;
            Some(TrainedModel::from_document(&doc).map_err(|e| StoreError::Corrupt(e.to_string()))?)
        } else {
            None
        };
        let mut history = HistoryIndex::from_stores(stm.schedule(), &ltm);
        for p in stm.state().participants.values() {
            set_statics(&mut history, p);
        }
        let tokens = stm.state().participants.keys().map(|p| (cfg.participant_token(p), p.clone())).collect();
        Ok(Self {
            cfg,
            stm,
            ltm,
            history,
            model,
            dir: Some(dir.to_path_buf()),
            refreshed: BTreeMap::new(),
            last_tick: None,
            tokens,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn stm(&self) -> &StmStore {
        &self.stm
    }

    pub fn ltm(&self) -> &LtmStore {
        &self.ltm
    }

    pub fn history(&self) -> &HistoryIndex {
        &self.history
    }

    pub fn model(&self) -> Option<&TrainedModel> {
        self.model.as_ref()
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn participants(&self) -> Vec<String> {
        self.stm.state().participants.keys().cloned().collect()
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        self.stm.flush()?;
        self.ltm.flush()
    }

    fn expand_for(&mut self, plan: &ExperimentPlan, participant: &str, now: Timestamp) -> Result<usize, StoreError> {
        let avoid: Vec<_> = self
            .stm
            .schedule()
            .avoid_windows
            .get(participant)
            .map(|m| m.values().flatten().cloned().collect())
            .unwrap_or_default();
        let opts = ExpandOptions { confidence_threshold: self.cfg.confidence_threshold };
        let e = expand_plan(plan, participant, &avoid, opts).map_err(StoreError::Plan)?;
        let n = e.actions.len();
        self.stm.append(
            StmPayload::ActionsExpanded {
                participant: participant.to_string(),
                plan_id: plan.id.clone(),
                actions: e.actions,
                diagnostics: e.diagnostics,
            },
            now,
        )?;
        Ok(n)
    }

    /// Record a plan and expand it for every enrolled participant.
    pub fn create_plan(&mut self, plan: ExperimentPlan, now: Timestamp) -> Result<BTreeMap<String, usize>, StoreError> {
        self.stm.append(StmPayload::PlanCreated(plan.clone()), now)?;
        let mut out = BTreeMap::new();
        for p in self.participants() {
            out.insert(p.clone(), self.expand_for(&plan, &p, now)?);
        }
        Ok(out)
    }

    /// Enroll a participant and expand every existing plan for them. Returns their token.
    pub fn enroll(&mut self, participant: Participant, now: Timestamp) -> Result<String, StoreError> {
        let id = participant.id.clone();
        set_statics(&mut self.history, &participant);
        self.stm.append(StmPayload::ParticipantEnrolled(participant), now)?;
        self.tokens.insert(self.cfg.participant_token(&id), id.clone());
        let plans: Vec<ExperimentPlan> = self.stm.schedule().plans.values().cloned().collect();
        for plan in plans {
            self.expand_for(&plan, &id, now)?;
        }
        Ok(self.cfg.participant_token(&id))
    }

    /// Expiry and snooze sweeps, then the daily avoid-window refresh.
    pub fn tick(&mut self, now: Timestamp) -> Result<TickReport, StoreError> {
        let mut report = TickReport::default();
        if self.last_tick.is_some_and(|t| now < t) {
            return Ok(report);
        }
        for ev in self.stm.schedule().sweep(now) {
            match &ev {
                SweepEvent::Resume { .. } => report.resumed += 1,
                SweepEvent::Expire { .. } => report.expired += 1,
                SweepEvent::SkipStale { .. } => report.skipped += 1,
            }
            self.stm.append(StmPayload::from_sweep(&ev), now)?;
        }
        if self.model.is_some() {
            let today = now.date_naive();
            for p in self.participants() {
                if self.refreshed.get(&p).is_some_and(|d| *d >= today) {
                    continue;
                }
                report.windows_published += usize::from(self.refresh_windows(&p, today, now)?);
            }
        }
        self.last_tick = Some(now);
        Ok(report)
    }

    /// Predict and publish the avoid windows of `participant` for `date`. Returns whether
    /// anything changed.
    pub fn refresh_windows(&mut self, participant: &str, date: NaiveDate, now: Timestamp) -> Result<bool, StoreError> {
        let Some(model) = &self.model else { return Ok(false) };
        let windows =
            derive_avoid_windows(model, &self.history, participant, date, now, self.cfg.slot_minutes, self.cfg.tau);
        self.refreshed.insert(participant.to_string(), date);
        if self.stm.schedule().windows_for(participant, date) == windows.as_slice() {
            return Ok(false);
        }
        self.stm.append(
            StmPayload::AvoidWindowsPublished { participant: participant.to_string(), date, windows },
            now,
        )?;
        Ok(true)
    }

    /// Deliver every due action of `participant`, marking it notified.
    pub fn deliver(&mut self, participant: &str, now: Timestamp) -> Result<Vec<ScheduledAction>, StoreError> {
        let due: Vec<String> = self.stm.schedule().due_actions(participant, now).iter().map(|a| a.id.clone()).collect();
        let mut out = Vec::with_capacity(due.len());
        for id in due {
            let first = self.stm.schedule().actions[&id].first_notified().is_none();
            self.stm.append(
                StmPayload::StateTransition {
                    action_id: id.clone(),
                    to: crate::plan::ActionState::Notified { at: now },
                    at: now,
                },
                now,
            )?;
            let a = self.stm.schedule().actions[&id].clone();
            if first && a.is_question() {
                self.history.observe_delivery(participant, &id, now);
            }
            out.push(a);
        }
        Ok(out)
    }

    fn sensors_near(&self, participant: &str, at: Timestamp) -> Option<SensorBatch> {
        let window = Duration::minutes(self.cfg.sensor_window_minutes);
        let mut readings: Vec<_> = Vec::new();
        for (rec, b) in self.ltm.sensors_of(participant).rev() {
            if rec.recorded_at < at - window * 4 {
                break;
            }
            readings.extend(b.readings.iter().filter(|r| (r.at - at).abs() <= window).cloned());
        }
        if readings.is_empty() {
            return None;
        }
        readings.sort_by(|a, b| a.at.cmp(&b.at));
        Some(SensorBatch::new(participant, readings))
    }

    /// Settle an action as answered and archive the answers and their context snapshot.
    pub fn answer(
        &mut self,
        participant: &str,
        action_id: &str,
        answers: DiaryAnswerSet,
        now: Timestamp,
    ) -> Result<AnswerReceipt, ApiError> {
        let action = self.stm.schedule().action(action_id).map_err(ApiError::from)?.clone();
        if action.participant != participant {
            return Err(ApiError::not_found(format!("action {action_id} of participant {participant}")));
        }
        answers.validate(&self.cfg.vocabulary).map_err(|e| ApiError::vocabulary(&e))?;
        let outcome = OutcomeKind::Answered { at: now };
        let prior = self.stm.schedule().settled_outcome(action_id).cloned();
        if let Some(p) = prior.as_ref().filter(|p| matches!(p.kind, OutcomeKind::Answered { .. })) {
            let stored = self.ltm.answers_of(participant).rev().find(|r| r.action_id == action_id);
            let same = stored.is_some_and(|r| {
                let mut a = answers.clone();
                a.notified_at = r.answers.notified_at;
                a.answered_at = r.answers.answered_at;
                a == r.answers
            });
            if !same {
                return Err(ApiError::conflict(format!("action {action_id} was already answered differently"))
                    .with_detail("state", "answered".into()));
            }
            let id = crate::store::ltm::record_id(participant, &LtmPayload::Answer(stored.expect("checked").clone()));
            return Ok(AnswerReceipt {
                action_id: action_id.to_string(),
                replayed: true,
                delay_minutes: p.delay_minutes,
                answer_record: id,
                snapshot_record: None,
            });
        }
        if prior.is_some() {
            let state = self.stm.schedule().actions[action_id].state.name();
            return Err(ApiError::new(409, "already_settled", format!("action {action_id} is already {state}"))
                .with_detail("state", state.into()));
        }
        self.stm.schedule().check_outcome(action_id, &outcome, now).map_err(|e| {
            let state = self.stm.schedule().actions[action_id].state.name();
            ApiError::from(e).with_detail("state", state.into())
        })?;
        self.stm
            .append(StmPayload::Outcome { action_id: action_id.to_string(), outcome, at: now }, now)
            .map_err(ApiError::from)?;
        let settled = self.stm.schedule().settled_outcome(action_id).cloned().expect("answered");
        let notified = settled.notification_time.unwrap_or(now);
        let answered = settled.answer_time.unwrap_or(now);
        let mut answers = answers;
        answers.notified_at = Some(notified);
        answers.answered_at = Some(answered);
        let record = AnswerRecord {
            action_id: action_id.to_string(),
            participant: participant.to_string(),
            template_id: action.template_id.clone(),
            notification_time: notified,
            answer_time: answered,
            answers: answers.clone(),
        };
        self.history.observe_answered(participant, action_id, answered);
        self.history.observe_answer(&record);
        let sensors = self.sensors_near(participant, answered);
        let snapshot = build_snapshot(&self.cfg.vocabulary, participant, answered, &answers, sensors.as_ref())
            .map_err(ApiError::from)?;
        let a = self.ltm.append(participant, LtmPayload::Answer(record), answered).map_err(ApiError::from)?;
        let s = self.ltm.append(participant, LtmPayload::Snapshot(snapshot), answered).map_err(ApiError::from)?;
        Ok(AnswerReceipt {
            action_id: action_id.to_string(),
            replayed: false,
            delay_minutes: settled.delay_minutes,
            answer_record: a.id().to_string(),
            snapshot_record: Some(s.id().to_string()),
        })
    }

    /// Archive a sensor batch and annotate recent snapshots that fall within its window. A batch
    /// naming a delivered sensor task completes that task.
    pub fn ingest_sensors(&mut self, batch: SensorBatch, now: Timestamp) -> Result<SensorReceipt, ApiError> {
        if !self.stm.state().participants.contains_key(&batch.participant) {
            return Err(ApiError::not_found(format!("participant {}", batch.participant)));
        }
        for r in &batch.readings {
            if let SensorValue::Geo { latitude, longitude } = r.value {
                if !crate::context::geo_in_bounds(latitude, longitude) {
                    return Err(ApiError::unprocessable(format!("geo reading out of range: ({latitude}, {longitude})"))
                        .with_detail("field", "readings".into()));
                }
            }
        }
        let task = match &batch.action_id {
            Some(id) => {
                let a = self.stm.schedule().action(id).map_err(ApiError::from)?;
                if a.participant != batch.participant || a.is_question() {
                    return Err(ApiError::not_found(format!("sensor task {id}")));
                }
                matches!(a.state, crate::plan::ActionState::Notified { .. }).then(|| id.clone())
            }
            None => None,
        };
        let p = batch.participant.clone();
        if let Some(id) = task {
            let outcome = OutcomeKind::Answered { at: now };
            self.stm.append(StmPayload::Outcome { action_id: id, outcome, at: now }, now).map_err(ApiError::from)?;
        }
        let res = self.ltm.append(&p, LtmPayload::Sensor(batch.clone()), now).map_err(ApiError::from)?;
        let mut annotated = 0;
        if !res.is_duplicate() {
            self.history.observe_sensors(&batch);
            let window = Duration::minutes(self.cfg.sensor_window_minutes);
            let earliest = batch.readings.iter().map(|r| r.at).min();
            if let Some(earliest) = earliest {
                let recent: Vec<_> = self
                    .ltm
                    .of_participant(&p)
                    .rev()
                    .take_while(|r| r.recorded_at >= earliest - window * 2)
                    .filter_map(|r| match &r.payload {
                        LtmPayload::Snapshot(s) => Some(s.clone()),
                        _ => None,
                    })
                    .collect();
                for s in recent {
                    let ann = crate::context::annotate_with_sensors(&s, &batch, window);
                    if ann.snapshot != s {
                        let r = self.ltm.append(&p, LtmPayload::Snapshot(ann.snapshot), now).map_err(ApiError::from)?;
                        annotated += usize::from(!r.is_duplicate());
                    }
                }
            }
        }
        Ok(SensorReceipt { record: res.id().to_string(), duplicate: res.is_duplicate(), snapshots_annotated: annotated })
    }

    /// Participant owning `token`, if any.
    pub fn participant_for_token(&self, token: &str) -> Option<&str> {
        self.tokens.get(token).map(String::as_str)
    }

    pub fn replan(&mut self, req: ReplanRequest, now: Timestamp) -> Result<ScheduledAction, ApiError> {
        let id = req.action_id.clone();
        self.stm.append(StmPayload::Replan(req), now).map_err(ApiError::from)?;
        Ok(self.stm.schedule().actions[&id].clone())
    }

    fn persist_model(&self, model: &TrainedModel) -> Result<(), StoreError> {
        if let Some(dir) = &self.dir {
            write_atomic(&dir.join(MODEL_FILE), model.to_document().as_bytes())?;
        }
        Ok(())
    }

    /// Install a trained model and republish today's windows with it.
    pub fn install_model(&mut self, model: TrainedModel, now: Timestamp) -> Result<usize, StoreError> {
        self.persist_model(&model)?;
        self.model = Some(model);
        self.refreshed.clear();
        let today = now.date_naive();
        let mut published = 0;
        for p in self.participants() {
            published += usize::from(self.refresh_windows(&p, today, now)?);
        }
        Ok(published)
    }
}

fn set_statics(history: &mut HistoryIndex, p: &Participant) {
    for (k, v) in &p.attributes {
        if let Ok(x) = v.parse::<f64>() {
            history.set_static(&p.id, k, x);
        }
    }
}

#[cfg(test)]
mod tests;
