//! Offline analysis of correlated CAGs: isomorphism classes, average
//! causal paths, latency shares and accuracy against ground truth.

mod accuracy;
mod patterns;
mod report;
mod signature;

pub use accuracy::{score_accuracy, AccuracyReport, Mismatch, MismatchReason};
pub use patterns::{
    average_path, classify, latency_breakdown, AveragePath, Classification, ClassifyConfig, EdgeStats,
    LatencyBreakdown, PathVertex, Pattern, Segment,
};
pub use report::{analyze, AnalysisReport, PatternReport};
pub use signature::{canonical_form, pattern_id, signature, CanonicalForm};
