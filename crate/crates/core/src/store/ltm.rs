//! Long-term memory: answers, sensor batches and context snapshots, deduplicated by content.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::log::{LineLog, Recovery, SyncPolicy};
use super::StoreError;
use crate::context::{ContextSnapshot, DiaryAnswerSet, SensorBatch};
use crate::ids::sha256_hex;
use crate::time::Timestamp;

pub const LTM_NAME: &str = "ltm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub action_id: String,
    pub participant: String,
    pub template_id: String,
    pub notification_time: Timestamp,
    pub answer_time: Timestamp,
    pub answers: DiaryAnswerSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum LtmPayload {
    Answer(AnswerRecord),
    Sensor(SensorBatch),
    Snapshot(ContextSnapshot),
}

impl LtmPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            LtmPayload::Answer(_) => "Answer",
            LtmPayload::Sensor(_) => "Sensor",
            LtmPayload::Snapshot(_) => "Snapshot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtmRecord {
    pub id: String,
    pub participant: String,
    pub recorded_at: Timestamp,
    #[serde(flatten)]
    pub payload: LtmPayload,
}

/// Content address of a record: the hash of its participant and payload, independent of
/// when it was received.
pub fn record_id(participant: &str, payload: &LtmPayload) -> String {
    let doc = serde_json::to_vec(&(participant, payload)).expect("payload serializes");
    sha256_hex(&doc)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AppendResult {
    Appended(String),
    Duplicate(String),
}

impl AppendResult {
    pub fn id(&self) -> &str {
        match self {
            AppendResult::Appended(id) | AppendResult::Duplicate(id) => id,
        }
    }

    pub fn is_duplicate(&self) -> bool {
        matches!(self, AppendResult::Duplicate(_))
    }
}

#[derive(Debug)]
pub struct LtmStore {
    log: LineLog,
    records: Vec<LtmRecord>,
    by_id: HashMap<String, usize>,
    by_participant: BTreeMap<String, Vec<usize>>,
}

impl LtmStore {
    pub fn in_memory() -> Self {
        Self::with_log(LineLog::memory())
    }

    fn with_log(log: LineLog) -> Self {
        Self { log, records: Vec::new(), by_id: HashMap::new(), by_participant: BTreeMap::new() }
    }

    pub fn open(dir: &Path, sync: SyncPolicy) -> Result<(Self, Recovery), StoreError> {
        let (log, docs, recovery) = LineLog::open_file(&dir.join(format!("{LTM_NAME}.log")), sync)?;
        let mut store = Self::with_log(log);
        for doc in docs {
            let rec: LtmRecord = serde_json::from_slice(&doc)?;
            store.index(rec);
        }
        Ok((store, recovery))
    }

    fn index(&mut self, rec: LtmRecord) {
        if self.by_id.contains_key(&rec.id) {
            return;
        }
        let i = self.records.len();
        self.by_id.insert(rec.id.clone(), i);
        self.by_participant.entry(rec.participant.clone()).or_default().push(i);
        self.records.push(rec);
    }

    /// Append unless a record with the same content already exists.
    pub fn append(&mut self, participant: &str, payload: LtmPayload, recorded_at: Timestamp) -> Result<AppendResult, StoreError> {
        let id = record_id(participant, &payload);
        if self.by_id.contains_key(&id) {
            return Ok(AppendResult::Duplicate(id));
        }
        let rec = LtmRecord { id: id.clone(), participant: participant.to_string(), recorded_at, payload };
        self.log.append(&serde_json::to_vec(&rec)?)?;
        self.index(rec);
        Ok(AppendResult::Appended(id))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LtmRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[LtmRecord] {
        &self.records
    }

    /// Records of one participant in append order.
    pub fn of_participant<'a>(&'a self, participant: &str) -> impl DoubleEndedIterator<Item = &'a LtmRecord> + 'a {
        self.by_participant.get(participant).into_iter().flatten().map(move |&i| &self.records[i])
    }

    pub fn answers_of<'a>(&'a self, participant: &str) -> impl DoubleEndedIterator<Item = &'a AnswerRecord> + 'a {
        self.of_participant(participant).filter_map(|r| match &r.payload {
            LtmPayload::Answer(a) => Some(a),
            _ => None,
        })
    }

    pub fn sensors_of<'a>(&'a self, participant: &str) -> impl DoubleEndedIterator<Item = (&'a LtmRecord, &'a SensorBatch)> + 'a {
        self.of_participant(participant).filter_map(|r| match &r.payload {
            LtmPayload::Sensor(b) => Some((r, b)),
            _ => None,
        })
    }

    pub fn participants(&self) -> impl Iterator<Item = &str> {
        self.by_participant.keys().map(String::as_str)
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        self.log.flush()
    }
}
