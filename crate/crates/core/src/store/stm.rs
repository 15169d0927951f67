//! Short-term memory: plans, scheduled actions, re-plans, outcomes and avoid windows, as an
//! event log folded into [`StmState`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::log::{decode_lines, write_atomic, LineLog, Recovery, SyncPolicy};
use super::StoreError;
use crate::monitoring::Goal;
use crate::plan::{
    ActionState, AvoidWindow, Diagnostic, ExperimentPlan, OutcomeKind, PlanError, ReplanRequest, Schedule,
    ScheduledAction, SweepEvent,
};
use crate::time::Timestamp;

pub const STM_NAME: &str = "stm";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub enrolled_at: Timestamp,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum StmPayload {
    PlanCreated(ExperimentPlan),
    ParticipantEnrolled(Participant),
    ActionsExpanded {
        participant: String,
        plan_id: String,
        actions: Vec<ScheduledAction>,
        diagnostics: Vec<Diagnostic>,
    },
    Replan(ReplanRequest),
    StateTransition { action_id: String, to: ActionState, at: Timestamp },
    Outcome { action_id: String, outcome: OutcomeKind, at: Timestamp },
    AvoidWindowsPublished { participant: String, date: NaiveDate, windows: Vec<AvoidWindow> },
    GoalUpserted(Goal),
    GoalRemoved { id: String },
}

impl StmPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            StmPayload::PlanCreated(_) => "PlanCreated",
            StmPayload::ParticipantEnrolled(_) => "ParticipantEnrolled",
            StmPayload::ActionsExpanded { .. } => "ActionsExpanded",
            StmPayload::Replan(_) => "Replan",
            StmPayload::StateTransition { .. } => "StateTransition",
            StmPayload::Outcome { .. } => "Outcome",
            StmPayload::AvoidWindowsPublished { .. } => "AvoidWindowsPublished",
            StmPayload::GoalUpserted(_) => "GoalUpserted",
            StmPayload::GoalRemoved { .. } => "GoalRemoved",
        }
    }

    /// The participant this event concerns, when it can be read off the payload.
    pub fn participant(&self) -> Option<&str> {
        match self {
            StmPayload::ParticipantEnrolled(p) => Some(&p.id),
            StmPayload::ActionsExpanded { participant, .. } => Some(participant),
            StmPayload::Replan(r) => Some(&r.participant),
            StmPayload::AvoidWindowsPublished { participant, .. } => Some(participant),
            StmPayload::GoalUpserted(g) => Some(&g.participant),
            _ => None,
        }
    }

    pub fn from_sweep(event: &SweepEvent) -> Self {
        match event {
            SweepEvent::Resume { action_id, at } => {
                StmPayload::StateTransition { action_id: action_id.clone(), to: ActionState::Pending, at: *at }
            }
            SweepEvent::SkipStale { action_id, at } => {
                StmPayload::StateTransition { action_id: action_id.clone(), to: ActionState::Skipped, at: *at }
            }
            SweepEvent::Expire { action_id, at } => {
                StmPayload::Outcome { action_id: action_id.clone(), outcome: OutcomeKind::Expired, at: *at }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StmEvent {
    pub seq: u64,
    pub recorded_at: Timestamp,
    #[serde(flatten)]
    pub payload: StmPayload,
}

/// The fold of all STM events.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StmState {
    pub last_seq: u64,
    pub participants: BTreeMap<String, Participant>,
    pub schedule: Schedule,
    pub goals: BTreeMap<String, Goal>,
}

impl StmState {
    /// Validate `payload` against the current state without mutating it.
    pub fn check(&self, payload: &StmPayload) -> Result<(), StoreError> {
        let s = &self.schedule;
        match payload {
            StmPayload::PlanCreated(plan) => s.check_add_plan(plan)?,
            StmPayload::ParticipantEnrolled(p) => {
                if p.id.trim().is_empty() || self.participants.contains_key(&p.id) {
                    return Err(StoreError::Rejected(format!("participant {:?} cannot be enrolled", p.id)));
                }
            }
            StmPayload::ActionsExpanded { participant, actions, .. } => {
                if !self.participants.contains_key(participant) {
                    return Err(StoreError::Rejected(format!("unknown participant {participant}")));
                }
                s.check_insert_actions(actions)?
            }
            StmPayload::Replan(req) => s.check_replan(req)?,
            StmPayload::StateTransition { action_id, to, at } => {
                if matches!(to, ActionState::Answered { .. } | ActionState::Expired) {
                    return Err(StoreError::Rejected("settlements must be recorded as outcomes".into()));
                }
                s.action(action_id)?.check_transition(to, *at)?
            }
            StmPayload::Outcome { action_id, outcome, at } => s.check_outcome(action_id, outcome, *at)?,
            StmPayload::AvoidWindowsPublished { windows, .. } => s.check_publish_windows(windows)?,
            StmPayload::GoalUpserted(g) => {
                if !self.participants.contains_key(&g.participant) {
                    return Err(StoreError::Rejected(format!("unknown participant {}", g.participant)));
                }
            }
            StmPayload::GoalRemoved { id } => {
                if !self.goals.contains_key(id) {
                    return Err(StoreError::Rejected(format!("unknown goal {id}")));
                }
            }
        }
        Ok(())
    }

    /// Apply one event. Events are checked before they are logged, so failures here mean the
    /// log is inconsistent.
    pub fn apply(&mut self, event: &StmEvent) -> Result<(), StoreError> {
        if event.seq <= self.last_seq {
            return Err(StoreError::Corrupt(format!("sequence {} after {}", event.seq, self.last_seq)));
        }
        let s = &mut self.schedule;
        match &event.payload {
            StmPayload::PlanCreated(plan) => s.add_plan(plan.clone())?,
            StmPayload::ParticipantEnrolled(p) => {
                self.participants.insert(p.id.clone(), p.clone());
            }
            StmPayload::ActionsExpanded { actions, .. } => s.insert_actions(actions.clone())?,
            StmPayload::Replan(req) => {
                s.apply_replan(req)?;
            }
            StmPayload::StateTransition { action_id, to, at } => match to {
                ActionState::Notified { at } => s.notify(action_id, *at)?,
                ActionState::Pending => {
                    s.apply_sweep_event(&SweepEvent::Resume { action_id: action_id.clone(), at: *at })?
                }
                ActionState::Skipped => {
                    s.apply_sweep_event(&SweepEvent::SkipStale { action_id: action_id.clone(), at: *at })?
                }
                other => {
                    return Err(StoreError::Rejected(format!("unsupported transition to {}", other.name())));
                }
            },
            StmPayload::Outcome { action_id, outcome, at } => {
                s.record_outcome(action_id, outcome.clone(), *at)?;
            }
            StmPayload::AvoidWindowsPublished { participant, date, windows } => {
                s.publish_windows(participant, *date, windows.clone(), event.recorded_at)?
            }
            StmPayload::GoalUpserted(g) => {
                self.goals.insert(g.id.clone(), g.clone());
            }
            StmPayload::GoalRemoved { id } => {
                self.goals.remove(id);
            }
        }
        self.last_seq = event.seq;
        Ok(())
    }

    /// Canonical serialized form, used to compare states byte for byte.
    pub fn to_document(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }

    pub fn from_document(doc: &[u8]) -> Result<Self, StoreError> {
        let mut state: StmState = serde_json::from_slice(doc)?;
        state.schedule.reindex();
        Ok(state)
    }
}

/// Fold events from an initial state.
pub fn rebuild_state<'a>(events: impl IntoIterator<Item = &'a StmEvent>) -> Result<StmState, StoreError> {
    let mut state = StmState::default();
    for e in events {
        state.apply(e)?;
    }
    Ok(state)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanFilter {
    pub participant: Option<String>,
    pub from: Option<Timestamp>,
    pub to: Option<Timestamp>,
    pub kind: Option<String>,
}

impl ScanFilter {
    fn matches_time(&self, t: Timestamp) -> bool {
        self.from.is_none_or(|f| t >= f) && self.to.is_none_or(|e| t < e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenReport {
    pub recovery: Recovery,
    pub checkpoint_seq: Option<u64>,
}

/// The STM store: an event log plus the live fold.
#[derive(Debug)]
pub struct StmStore {
    log: LineLog,
    dir: Option<PathBuf>,
    state: StmState,
    checkpoint: Option<(u64, StmState)>,
}

fn checkpoint_name(seq: u64) -> String {
    format!("{STM_NAME}.{seq}.ckpt")
}

fn find_checkpoints(dir: &Path) -> Result<Vec<(u64, PathBuf)>, StoreError> {
    let mut found = Vec::new();
    if !dir.exists() {
        return Ok(found);
    }
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(seq) = name
            .strip_prefix(&format!("{STM_NAME}."))
            .and_then(|r| r.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            found.push((seq, entry.path()));
        }
    }
    found.sort();
    Ok(found)
}

fn read_checkpoint(path: &Path) -> Result<StmState, StoreError> {
    let bytes = fs::read(path)?;
    let decoded = decode_lines(&bytes);
    match decoded.docs.as_slice() {
        [doc] if decoded.dropped == 0 => StmState::from_document(doc),
        _ => Err(StoreError::Corrupt(format!("checkpoint {} is damaged", path.display()))),
    }
}

impl StmStore {
    pub fn in_memory() -> Self {
        Self { log: LineLog::memory(), dir: None, state: StmState::default(), checkpoint: None }
    }

    /// Rebuild from a raw log image (no checkpoint).
    pub fn from_bytes(bytes: Vec<u8>) -> Result<(Self, OpenReport), StoreError> {
        let (log, docs, recovery) = LineLog::from_bytes(bytes);
        let mut store = Self { log, dir: None, state: StmState::default(), checkpoint: None };
        store.replay(&docs)?;
        Ok((store, OpenReport { recovery, checkpoint_seq: None }))
    }

    /// Open `<dir>/stm.log`, loading the newest checkpoint first.
    pub fn open(dir: &Path, sync: SyncPolicy) -> Result<(Self, OpenReport), StoreError> {
        let (log, docs, recovery) = LineLog::open_file(&dir.join(format!("{STM_NAME}.log")), sync)?;
        let checkpoint = match find_checkpoints(dir)?.last() {
            Some((seq, path)) => Some((*seq, read_checkpoint(path)?)),
            None => None,
        };
        let state = checkpoint.as_ref().map(|(_, s)| s.clone()).unwrap_or_default();
        let checkpoint_seq = checkpoint.as_ref().map(|(s, _)| *s);
        let mut store = Self { log, dir: Some(dir.to_path_buf()), state, checkpoint };
        store.replay(&docs)?;
        Ok((store, OpenReport { recovery, checkpoint_seq }))
    }

    fn replay(&mut self, docs: &[Vec<u8>]) -> Result<(), StoreError> {
        for doc in docs {
            let event: StmEvent = serde_json::from_slice(doc)?;
            if event.seq > self.state.last_seq {
                self.state.apply(&event)?;
            }
        }
        Ok(())
    }

    pub fn state(&self) -> &StmState {
        &self.state
    }

    pub fn schedule(&self) -> &Schedule {
        &self.state.schedule
    }

    /// Check, append durably, then apply. Returns the new sequence number.
    pub fn append(&mut self, payload: StmPayload, recorded_at: Timestamp) -> Result<u64, StoreError> {
        self.state.check(&payload)?;
        let event = StmEvent { seq: self.state.last_seq + 1, recorded_at, payload };
        let doc = serde_json::to_vec(&event)?;
        self.log.append(&doc)?;
        self.state.apply(&event)?;
        Ok(event.seq)
    }

    /// Committed events (after the newest checkpoint) matching `filter`, in sequence order.
    pub fn scan(&self, filter: &ScanFilter) -> Result<Vec<StmEvent>, StoreError> {
        let bytes = self.log.read_all()?;
        let mut out = Vec::new();
        for doc in decode_lines(&bytes).docs {
            let e: StmEvent = serde_json::from_slice(doc)?;
            let keep = filter.matches_time(e.recorded_at)
                && filter.kind.as_deref().is_none_or(|k| k == e.payload.kind())
                && filter.participant.as_deref().is_none_or(|p| self.event_participant(&e) == Some(p));
            if keep {
                out.push(e);
            }
        }
        Ok(out)
    }

    fn event_participant<'a>(&'a self, e: &'a StmEvent) -> Option<&'a str> {
        if let Some(p) = e.payload.participant() {
            return Some(p);
        }
        let action = match &e.payload {
            StmPayload::StateTransition { action_id, .. } | StmPayload::Outcome { action_id, .. } => action_id,
            _ => return None,
        };
        self.state.schedule.actions.get(action).map(|a| a.participant.as_str())
    }

    /// Write `stm.<up_to_seq>.ckpt` holding the state after `up_to_seq` and drop those
    /// events from the log.
    pub fn compact(&mut self, up_to_seq: u64) -> Result<PathBuf, StoreError> {
        let dir = self.dir.clone().ok_or_else(|| StoreError::Rejected("in-memory stores have no checkpoints".into()))?;
        if up_to_seq > self.state.last_seq {
            return Err(StoreError::Rejected(format!("sequence {up_to_seq} not yet written")));
        }
        let base_seq = self.checkpoint.as_ref().map(|(s, _)| *s).unwrap_or(0);
        if up_to_seq < base_seq {
            return Err(StoreError::Rejected(format!("sequence {up_to_seq} is before checkpoint {base_seq}")));
        }
        let bytes = self.log.read_all()?;
        let docs: Vec<Vec<u8>> = decode_lines(&bytes).docs.iter().map(|d| d.to_vec()).collect();
        let mut state = self.checkpoint.as_ref().map(|(_, s)| s.clone()).unwrap_or_default();
        let mut keep = Vec::new();
        for doc in docs {
            let e: StmEvent = serde_json::from_slice(&doc)?;
            if e.seq <= up_to_seq {
                if e.seq > state.last_seq {
                    state.apply(&e)?;
                }
            } else {
                keep.push(doc);
            }
        }
        let path = dir.join(checkpoint_name(up_to_seq));
        write_atomic(&path, &super::log::encode_line(state.to_document().as_bytes()))?;
        self.log.rewrite(&keep)?;
        for (seq, old) in find_checkpoints(&dir)? {
            if seq < up_to_seq {
                fs::remove_file(old)?;
            }
        }
        self.checkpoint = Some((up_to_seq, state));
        Ok(path)
    }

    pub fn log_bytes(&self) -> Result<Vec<u8>, StoreError> {
        self.log.read_all()
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        self.log.flush()
    }
}

impl From<PlanError> for StoreError {
    fn from(e: PlanError) -> Self {
        StoreError::Plan(e)
    }
}
