use serde::{Deserialize, Serialize};

use super::normal::{normal_cdf, two_sided_z};
use super::StatsError;

pub const POOLED_Z_METHOD: &str = "pooled-two-proportion-z";
pub const ARCSINE_POWER_METHOD: &str = "arcsine-cohen-h";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// (p2 − p1) in percentage points.
    pub effect_pp: f64,
    pub method: String,
}

/// Pooled two-proportion z-test of `s2/n2` against `s1/n1`, two-sided.
pub fn two_proportion_test(s1: u64, n1: u64, s2: u64, n2: u64) -> Result<TestResult, StatsError> {
    if n1 == 0 || n2 == 0 {
        return Err(StatsError::Domain("both groups need n >= 1".into()));
    }
    if s1 > n1 || s2 > n2 {
        return Err(StatsError::Domain("successes exceed group size".into()));
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let p1 = s1 as f64 / n1f;
    let p2 = s2 as f64 / n2f;
    let pooled = (s1 + s2) as f64 / (n1f + n2f);
    if s1 + s2 == 0 || s1 + s2 == n1 + n2 {
        return Err(StatsError::DegeneratePool(pooled));
    }
    let se = (pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f)).sqrt();
    let z = if s1 * n2 == s2 * n1 { 0.0 } else { (p2 - p1) / se };
    let p_value = (2.0 * normal_cdf(-z.abs())).min(1.0);
    Ok(TestResult {
        statistic: z,
        p_value,
        effect_pp: (p2 - p1) * 100.0,
        method: POOLED_Z_METHOD.into(),
    })
}

/// Cohen's h = 2·asin(√p2) − 2·asin(√p1).
pub fn cohens_h(p1: f64, p2: f64) -> f64 {
    2.0 * p2.sqrt().asin() - 2.0 * p1.sqrt().asin()
}

/// Approximate power of a two-sided two-proportion test with `n_per_group`
/// per arm: Φ(|h|·√(n/2) − z_{α/2}).
pub fn power_two_proportions(p1: f64, p2: f64, n_per_group: u64, alpha: f64) -> Result<f64, StatsError> {
    for p in [p1, p2] {
        if !(p > 0.0 && p < 1.0) {
            return Err(StatsError::Domain(format!("proportion {p} outside (0, 1)")));
        }
    }
    if n_per_group < 2 {
        return Err(StatsError::Domain("power needs n >= 2 per group".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::Domain(format!("alpha {alpha} outside (0, 1)")));
    }
    let h = cohens_h(p1, p2).abs();
    let z_crit = two_sided_z(1.0 - alpha);
    Ok(normal_cdf(h * (n_per_group as f64 / 2.0).sqrt() - z_crit))
}
