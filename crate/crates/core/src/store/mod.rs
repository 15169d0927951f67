//! Durable stores. Both memories are line-delimited append-only logs (see [`log`]); STM is
//! event-sourced and LTM is content-addressed.

pub mod log;
pub mod ltm;
pub mod stm;

use std::path::PathBuf;

use thiserror::Error;

use crate::plan::PlanError;

pub use self::log::{Recovery, SyncPolicy};
pub use ltm::{AnswerRecord, AppendResult, LtmPayload, LtmRecord, LtmStore};
pub use stm::{rebuild_state, Participant, ScanFilter, StmEvent, StmPayload, StmState, StmStore};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("store {0} is locked by another process")]
    Locked(PathBuf),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("malformed record: {0}")]
    Serde(#[from] serde_json::Error),
    #[error(transparent)]
    Plan(PlanError),
    #[error("{0}")]
    Rejected(String),
}
