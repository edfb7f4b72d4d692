use std::fmt;

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::domain::{ConfusionMatrix, ValidationRecord};

/// A statistic that may be undefined (zero denominator, no data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Value(f64),
    Undefined(String),
}

impl Metric {
    pub fn undefined(reason: impl Into<String>) -> Self {
        Metric::Undefined(reason.into())
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(*v),
            Metric::Undefined(_) => None,
        }
    }

    pub fn ratio(num: u64, den: u64, reason: &str) -> Self {
        if den == 0 {
            Metric::undefined(reason)
        } else {
            Metric::Value(num as f64 / den as f64)
        }
    }

    /// Percentage with one decimal, or "undefined".
    pub fn percent(&self) -> String {
        match self {
            Metric::Value(v) => format!("{:.1}%", v * 100.0),
            Metric::Undefined(_) => "undefined".into(),
        }
    }

    pub fn fixed(&self, decimals: usize) -> String {
        match self {
            Metric::Value(v) => format!("{v:.decimals$}"),
            Metric::Undefined(_) => "undefined".into(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Value(v) => write!(f, "{v}"),
            Metric::Undefined(r) => write!(f, "undefined ({r})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecallF1 {
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

/// Tallies approval against correctness.
pub fn confusion_from<I>(pairs: I) -> ConfusionMatrix
where
    I: IntoIterator<Item = (bool, bool)>,
{
    let mut m = ConfusionMatrix::default();
    for (approved, correct) in pairs {
        match (approved, correct) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, false) => m.tn += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    m
}

/// Confusion matrix of stored outcomes. Every record must carry a claimed
/// answer and a ground-truth verdict.
pub fn confusion(records: &[ValidationRecord]) -> Result<ConfusionMatrix, StatsError> {
    let mut pairs = Vec::with_capacity(records.len());
    for r in records {
        match (r.question.claimed_answer, r.question.ground_truth_correct) {
            (Some(_), Some(correct)) => pairs.push((r.outcome.is_approved(), correct)),
            _ => return Err(StatsError::MissingGroundTruth(r.question.id.clone())),
        }
    }
    Ok(confusion_from(pairs))
}

pub fn precision_recall_f1(m: &ConfusionMatrix) -> PrecisionRecallF1 {
    let precision = Metric::ratio(m.tp, m.tp + m.fp, "no approved items");
    let recall = Metric::ratio(m.tp, m.tp + m.fn_, "no correct items");
    let f1 = match (precision.value(), recall.value()) {
        (Some(p), Some(r)) if p + r == 0.0 => Metric::Value(0.0),
        (Some(p), Some(r)) => Metric::Value(2.0 * p * r / (p + r)),
        _ => Metric::undefined("precision or recall undefined"),
    };
    PrecisionRecallF1 {
        precision,
        recall,
        f1,
    }
}
