//! Metrics, the training/inference scenario matrix and report files.

mod matrix;
mod metrics;
mod report;

pub use matrix::{
    default_cases, evaluate, run_cell, run_matrix, CellRun, MatrixConfig, MatrixOutcome, Splits, EVAL_MASK_SEED_OFFSET,
};
pub use metrics::{accuracy, f1_macro, f1_macro_classes, macro_from_counts, sigmoid, ClassCounts, F1Score};
pub use report::{emit_report, AggregateRow, Case, Method, MetricRow, MetricsReport, ReportFormat};

#[cfg(test)]
mod tests;
