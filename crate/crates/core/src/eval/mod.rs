//! Compliance scoring of generated reports and rubric aggregation.

mod citations;
mod compare;
mod metrics;
mod rubric;

use std::collections::{BTreeMap, BTreeSet};

pub use citations::extract_citations;
pub use compare::{compare_runs, DeltaTable, MetricDelta};
pub use metrics::{
    compute_metrics, confusion, report_scores, Averaging, ComplianceMetrics, Confusion, GroundTruth,
};
pub use rubric::{
    aggregate_panel, aggregate_rubric, CriterionStats, RubricAggregate, RubricScore, RUBRIC_MAX,
    RUBRIC_MIN,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("report ids differ from ground truth (missing: {missing:?}, extra: {extra:?})")]
    KeyMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("cannot compare {a} averaging with {b} averaging")]
    ModeMismatch { a: Averaging, b: Averaging },
    #[error("cannot compare runs over label universes of size {a} and {b}")]
    UniverseMismatch { a: usize, b: usize },
    #[error("no input to aggregate")]
    EmptyInput,
    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(String),
    #[error("{criterion} score {value} outside 1..=10")]
    RubricOutOfRange { criterion: &'static str, value: u8 },
}

/// Citations as the string labels used by [`GroundTruth`].
pub fn citation_labels(report_text: &str) -> BTreeSet<String> {
    extract_citations(report_text)
        .into_iter()
        .map(|p| p.to_string())
        .collect()
}

/// Extracts citation labels from each report body.
pub fn predictions_from_reports<'a>(
    reports: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> BTreeMap<String, BTreeSet<String>> {
    reports
        .into_iter()
        .map(|(id, text)| (id.to_string(), citation_labels(text)))
        .collect()
}
