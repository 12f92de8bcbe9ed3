//! Interactive summarizing sessions over keyframe summaries: videos,
//! per-learner sessions moving through selection, organization and
//! integration, and an append-only analytics log, served over HTTP.

pub mod http;
pub mod model;
mod service;
pub mod store;

use thiserror::Error;

pub use http::{router, serve};
pub use model::{
    AnalyticsEvent, Decision, NodeContent, Origin, OutlineNode, OutlineOp, Session, SessionDoc, Stage, SummaryBlock,
    VideoRecord,
};
pub use service::{parse_events_csv, parse_events_jsonl, ExportFormat, NewVideo, Service};
pub use store::{DirStore, MemoryStore, Store};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("version conflict: expected {expected}, session is at {actual}")]
    VersionConflict { expected: u64, actual: u64 },
    #[error("operation needs stage {required:?}, session is in {actual:?}")]
    WrongStage { required: Stage, actual: Stage },
    #[error("{0}")]
    Invalid(String),
    #[error("storage failure: {0}")]
    Store(String),
}
