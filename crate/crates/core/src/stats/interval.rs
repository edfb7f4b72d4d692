use serde::{Deserialize, Serialize};

use super::normal::two_sided_z;
use super::StatsError;

pub const WILSON_METHOD: &str = "wilson-score";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub successes: u64,
    pub trials: u64,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub confidence: f64,
    pub method: String,
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, n: u64, confidence: f64) -> Result<IntervalEstimate, StatsError> {
    if n == 0 {
        return Err(StatsError::Domain("wilson interval needs n >= 1".into()));
    }
    if successes > n {
        return Err(StatsError::Domain(format!("successes {successes} exceed trials {n}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(StatsError::Domain(format!("confidence {confidence} outside (0, 1)")));
    }
    let z = two_sided_z(confidence);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lower = if successes == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let upper = if successes == n { 1.0 } else { (center + half).clamp(p, 1.0) };
    Ok(IntervalEstimate {
        successes,
        trials: n,
        point: p,
        lower,
        upper,
        confidence,
        method: WILSON_METHOD.into(),
    })
}
