//! Black-box request tracing: rebuild the causal path of every request
//! through a multi-tier service from per-node logs of kernel SEND and
//! RECEIVE activities, then mine the paths for patterns and latency.
//!
//! The pipeline is `model` (activities and log lines) → `ranker` (merges
//! per-node streams into causal order) → `engine` (builds CAGs) →
//! `analysis`. `sim` produces synthetic logs with ground truth.

pub mod analysis;
pub mod cag;
pub mod cli;
pub mod correlate;
pub mod engine;
pub mod error;
pub mod model;
pub mod ranker;
pub mod sim;

pub use cag::{Cag, CagStatus, Edge, EdgeKind, Vertex};
pub use correlate::{correlate_logs, CorrelationOutput, CorrelationSummary, CorrelatorConfig};
pub use model::{Activity, ActivityRef, ActivityType, BoundaryRule, ContextId, Endpoint, MessageId};
