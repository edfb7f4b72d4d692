//! Monte Carlo ensembles of synthetic validators, with closed-form
//! predictions for the independent case.

use serde::{Deserialize, Serialize};

use crate::backends::{keyed_index, shared_difficulty, synthetic_choice};
use crate::consensus::decide_verdicts;
use crate::domain::{AnswerLabel, ConsensusPolicy, SyntheticValidatorSpec, Verdict};
use crate::stats::{cohen_kappa, wilson_interval, IntervalEstimate, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationParams {
    pub accuracies: Vec<f64>,
    pub difficulty_weight: f64,
    pub n_options: usize,
    pub items: u64,
    pub trials: u64,
    pub seed: u64,
    pub policy: ConsensusPolicy,
    pub confidence: f64,
}

impl SimulationParams {
    pub fn check(&self) -> Result<(), String> {
        if self.accuracies.len() < 2 {
            return Err("at least two validators required".into());
        }
        if let Some(a) = self.accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(format!("accuracy {a} outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.difficulty_weight) {
            return Err(format!("rho {} outside [0, 1]", self.difficulty_weight));
        }
        if !(2..=26).contains(&self.n_options) {
            return Err(format!("options must be in 2..=26, got {}", self.n_options));
        }
        if self.items == 0 || self.trials == 0 {
            return Err("items and trials must be positive".into());
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(format!("confidence {} outside (0, 1)", self.confidence));
        }
        self.policy
            .check_for(self.accuracies.len())
            .map_err(|e| e.to_string())
    }

    /// Validator specs; validator `i` gets a seed derived from the run seed.
    pub fn specs(&self) -> Vec<SyntheticValidatorSpec> {
        self.accuracies
            .iter()
            .enumerate()
            .map(|(i, &accuracy)| SyntheticValidatorSpec {
                accuracy,
                difficulty_weight: self.difficulty_weight,
                seed: self.seed.wrapping_mul(0x100_0000_01B3).wrapping_add(i as u64 + 1),
                difficulty_seed: self.seed,
            })
            .collect()
    }
}

/// Closed-form precision and coverage for independent validators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPrediction {
    pub precision: f64,
    pub coverage: f64,
    /// Probability that the correct label reaches quorum.
    pub correct_quorum: f64,
    /// Probability that one particular wrong label reaches quorum.
    pub wrong_quorum_each: f64,
}

/// P(at least `k` successes) for independent Bernoulli(p_i), by dynamic
/// programming over the count distribution.
pub fn at_least_k(probs: &[f64], k: usize) -> f64 {
    let mut dist = vec![0.0; probs.len() + 1];
    dist[0] = 1.0;
    for (i, &p) in probs.iter().enumerate() {
        for c in (0..=i + 1).rev() {
            let stay = dist[c] * (1.0 - p);
            let moved = if c > 0 { dist[c - 1] * p } else { 0.0 };
            dist[c] = stay + moved;
        }
    }
    dist[k.min(probs.len() + 1)..].iter().sum()
}

/// Independent validators, uniform wrong answers over `m - 1` labels:
/// a label reaches quorum with the Poisson-binomial tail probability, and
/// quorum uniqueness (k > n/2) makes the events disjoint.
pub fn analytic_independent(accuracies: &[f64], n_options: usize, quorum: usize) -> AnalyticPrediction {
    let m1 = (n_options - 1) as f64;
    let correct_quorum = at_least_k(accuracies, quorum);
    let wrong: Vec<f64> = accuracies.iter().map(|a| (1.0 - a) / m1).collect();
    let wrong_quorum_each = at_least_k(&wrong, quorum);
    let coverage = correct_quorum + m1 * wrong_quorum_each;
    AnalyticPrediction {
        precision: if coverage > 0.0 { correct_quorum / coverage } else { f64::NAN },
        coverage,
        correct_quorum,
        wrong_quorum_each,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairKappa {
    pub a: usize,
    pub b: usize,
    pub kappa: f64,
    pub observed_agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub params: SimulationParams,
    pub items: u64,
    pub approved: u64,
    pub approved_correct: u64,
    /// Share of approved items whose consensus label is correct.
    pub precision: Option<IntervalEstimate>,
    pub coverage: IntervalEstimate,
    pub pairwise_kappa: Vec<PairKappa>,
    pub mean_kappa: f64,
    /// Pairwise correlation of per-item correctness, averaged over pairs.
    pub mean_correctness_correlation: f64,
    pub analytic: Option<AnalyticPrediction>,
}

fn correlation(x: &[bool], y: &[bool]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().filter(|&&v| v).count() as f64 / n;
    let my = y.iter().filter(|&&v| v).count() as f64 / n;
    let mxy = x.iter().zip(y).filter(|(a, b)| **a && **b).count() as f64 / n;
    let den = (mx * (1.0 - mx) * my * (1.0 - my)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (mxy - mx * my) / den
    }
}

/// Runs `trials × items` synthetic questions through the consensus rule.
/// Approval here means a label reached quorum (no claim check), and
/// precision is the share of approvals that picked the correct label.
pub fn simulate(params: &SimulationParams) -> Result<SimulationSummary, String> {
    params.check()?;
    let specs = params.specs();
    let n_val = specs.len();
    let m = params.n_options;
    let policy = params.policy.with_claim_match(false);
    let total = params.items * params.trials;

    let mut approved = 0u64;
    let mut approved_correct = 0u64;
    let mut votes: Vec<Vec<usize>> = vec![Vec::with_capacity(total as usize); n_val];
    let mut correct_flags: Vec<Vec<bool>> = vec![Vec::with_capacity(total as usize); n_val];
    let mut verdicts: Vec<Verdict> = Vec::with_capacity(n_val);

    for item in 0..total {
        let d = shared_difficulty(params.seed, item);
        let correct = keyed_index(params.seed ^ 0x5EED_0000_C0DE, item, m);
        verdicts.clear();
        for (i, spec) in specs.iter().enumerate() {
            let choice = synthetic_choice(spec, item, correct, m, d);
            votes[i].push(choice);
            correct_flags[i].push(choice == correct);
            verdicts.push(Verdict::Label(AnswerLabel::from_index(choice).expect("m <= 26")));
        }
        let outcome = decide_verdicts(&verdicts, None, &policy).map_err(|e| e.to_string())?;
        if let crate::domain::Outcome::Approved(label) = outcome {
            approved += 1;
            if label.index() == correct {
                approved_correct += 1;
            }
        }
    }

    let mut pairwise_kappa = Vec::new();
    let mut corr_sum = 0.0;
    for a in 0..n_val {
        for b in a + 1..n_val {
            let s = cohen_kappa(&votes[a], &votes[b]).map_err(|e: StatsError| e.to_string())?;
            pairwise_kappa.push(PairKappa {
                a,
                b,
                kappa: s.kappa,
                observed_agreement: s.observed_agreement,
            });
            corr_sum += correlation(&correct_flags[a], &correct_flags[b]);
        }
    }
    let pairs = pairwise_kappa.len() as f64;
    let mean_kappa = pairwise_kappa.iter().map(|p| p.kappa).sum::<f64>() / pairs;

    let precision = wilson_interval(approved_correct, approved, params.confidence).ok();
    let coverage = wilson_interval(approved, total, params.confidence).map_err(|e| e.to_string())?;
    let analytic = (params.difficulty_weight == 0.0)
        .then(|| analytic_independent(&params.accuracies, m, policy.quorum(n_val)));

    Ok(SimulationSummary {
        params: params.clone(),
        items: total,
        approved,
        approved_correct,
        precision,
        coverage,
        pairwise_kappa,
        mean_kappa,
        mean_correctness_correlation: corr_sum / pairs,
        analytic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(acc: f64, rho: f64, items: u64, seed: u64) -> SimulationParams {
        SimulationParams {
            accuracies: vec![acc; 3],
            difficulty_weight: rho,
            n_options: 8,
            items,
            trials: 1,
            seed,
            policy: ConsensusPolicy::unanimous(),
            confidence: 0.95,
        }
    }

    #[test]
    fn analytic_unanimous_values() {
        let p = analytic_independent(&[0.9, 0.9, 0.9], 8, 3);
        assert!((p.correct_quorum - 0.729).abs() < 1e-12);
        let wrong = 7.0 * (0.1f64 / 7.0).powi(3);
        assert!((p.coverage - (0.729 + wrong)).abs() < 1e-12);
        assert!((7.0 * p.wrong_quorum_each - 2.0408e-5).abs() < 1e-8);
        assert!((p.precision - 0.729 / (0.729 + wrong)).abs() < 1e-12);
    }

    #[test]
    fn at_least_k_by_enumeration() {
        let probs = [0.3, 0.8, 0.55, 0.1];
        for k in 0..=5 {
            let mut brute = 0.0;
            for mask in 0u32..16 {
                if mask.count_ones() as usize >= k {
                    brute += (0..4)
                        .map(|i| if mask & (1 << i) != 0 { probs[i] } else { 1.0 - probs[i] })
                        .product::<f64>();
                }
            }
            assert!((at_least_k(&probs, k) - brute).abs() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn perfect_validators() {
        let s = simulate(&params(1.0, 0.0, 500, 1)).unwrap();
        assert_eq!(s.approved, 500);
        assert_eq!(s.approved_correct, 500);
        assert_eq!(s.coverage.point, 1.0);
        assert_eq!(s.precision.unwrap().point, 1.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let a = simulate(&params(0.7, 0.4, 2000, 5)).unwrap();
        let b = simulate(&params(0.7, 0.4, 2000, 5)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&params(0.7, 0.4, 2000, 6)).unwrap();
        assert_ne!(a.approved, c.approved);
    }

    #[test]
    fn difficulty_coupling_raises_correlation() {
        let indep = simulate(&params(0.8, 0.0, 20_000, 3)).unwrap();
        let coupled = simulate(&params(0.8, 1.0, 20_000, 3)).unwrap();
        assert!(indep.mean_correctness_correlation.abs() < 0.03);
        assert!(coupled.mean_correctness_correlation > 0.1);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = params(0.9, 0.0, 10, 0);
        p.accuracies = vec![0.9];
        assert!(simulate(&p).is_err());
        let mut p = params(0.9, 0.0, 10, 0);
        p.n_options = 1;
        assert!(simulate(&p).is_err());
        let mut p = params(1.1, 0.0, 10, 0);
        p.difficulty_weight = 0.0;
        assert!(simulate(&p).is_err());
    }
}
