//! Reliability statistics: confusion metrics, agreement, intervals,
//! proportion tests, power and error compounding.

mod agreement;
mod compounding;
mod hypothesis;
mod interval;
mod metrics;
pub mod normal;
mod report;

use thiserror::Error;

pub use agreement::{cohen_kappa, AgreementStats};
pub use compounding::{compound_error, compounding_row, CompoundingRow};
pub use hypothesis::{
    cohens_h, power_two_proportions, two_proportion_test, TestResult, ARCSINE_POWER_METHOD,
    POOLED_Z_METHOD,
};
pub use interval::{wilson_interval, IntervalEstimate, WILSON_METHOD};
pub use metrics::{confusion, confusion_from, precision_recall_f1, Metric, PrecisionRecallF1};
pub use report::{
    build_report, build_standard_report, compare_rates, policy_name, render_comparisons, render_compounding, render_text,
    AgreementRow, BaselineCounts, BaselineRow, BaselineSource, ComparisonRow, Configuration, ConfigurationRow, RateCounts,
    ReliabilityReport, ReportOptions, VerdictCategory, FOOTNOTES,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no items")]
    Empty,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("pooled proportion {0} is degenerate; z is undefined")]
    DegeneratePool(f64),
    #[error("record {0:?} lacks a claimed answer or ground truth")]
    MissingGroundTruth(String),
}
