use serde::{Deserialize, Serialize};

use super::StatsError;

/// Probability that at least one of `steps` independent steps fails.
pub fn compound_error(step_error: f64, steps: u32) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&step_error) {
        return Err(StatsError::Domain(format!("step error {step_error} outside [0, 1]")));
    }
    Ok(1.0 - (1.0 - step_error).powi(steps as i32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundingRow {
    pub label: String,
    pub step_error: f64,
    pub steps: Vec<u32>,
    pub compounded: Vec<f64>,
}

pub fn compounding_row(label: &str, step_error: f64, steps: &[u32]) -> Result<CompoundingRow, StatsError> {
    let compounded = steps
        .iter()
        .map(|&k| compound_error(step_error, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CompoundingRow {
        label: label.to_string(),
        step_error,
        steps: steps.to_vec(),
        compounded,
    })
}
