use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    pub kappa: f64,
    pub n_items: usize,
}

/// Cohen's κ between two raters over any finite category set.
///
/// κ = (p_o − p_e) / (1 − p_e); defined as 1 when both raters always use
/// the same single category.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<AgreementStats, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::Empty);
    }
    let n = a.len();
    let mut agree = 0usize;
    let mut marg: BTreeMap<&T, (usize, usize)> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        if x == y {
            agree += 1;
        }
        marg.entry(x).or_default().0 += 1;
        marg.entry(y).or_default().1 += 1;
    }
    let nf = n as f64;
    let p_o = agree as f64 / nf;
    // Σ n_a·n_b in integers, divided once, keeps p_e exact for small n.
    let cross: u128 = marg.values().map(|&(x, y)| x as u128 * y as u128).sum();
    let p_e = cross as f64 / (nf * nf);
    let kappa = if cross == (n as u128) * (n as u128) {
        1.0
    } else {
        // numerator and denominator over n² to avoid rounding p_o and p_e
        let num = (agree as u128 * n as u128) as f64 - cross as f64;
        let den = (n as u128 * n as u128) as f64 - cross as f64;
        num / den
    };
    Ok(AgreementStats {
        observed_agreement: p_o,
        expected_agreement: p_e,
        kappa,
        n_items: n,
    })
}
