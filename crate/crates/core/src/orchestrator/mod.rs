//! Run grids, durable records, resume, reports and screening.

pub mod execute;
pub mod report;
pub mod screen;
pub mod store;

use thiserror::Error;

pub use execute::{execute, ExecutionSummary, FaultInjection, ModelEntry, ModelSpec, RunPlan};
pub use report::{build_report, write_report, Report};
pub use screen::two_stage_screen;
pub use store::{ResultRecord, Store};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("record store: {0}")]
    Store(String),
}
