//! Orchestration core for Big-Thick data collection experiments.
//!
//! The crate is organised around the data flow of an experiment:
//!
//! - [`context`]: personal-context knowledge graphs built from diary answers and sensor readings.
//! - [`plan`]: researcher plans, their expansion into scheduled actions, the delivery state
//!   machine and participant re-plans.
//! - [`store`]: the short-term (STM) and long-term (LTM) append-only logs.
//! - [`ml`]: busy-period classifiers, evaluation metrics and avoid-window derivation.
//! - [`sim`]: deterministic synthetic cohorts driving the service end to end.
//! - [`monitoring`]: dashboard datasets (summaries, comparisons, alerts, goals).
//! - [`service`]: the request/response API that binds everything together.
//!
//! Nothing in this crate reads the wall clock; every operation takes `now` explicitly.

pub mod context;
pub mod ids;
pub mod ml;
pub mod monitoring;
pub mod plan;
pub mod service;
pub mod sim;
pub mod store;
pub mod time;
pub mod vocab;

pub use context::{ContextSnapshot, DiaryAnswerSet};
pub use plan::{ExperimentPlan, ScheduledAction};
pub use vocab::Vocabulary;
