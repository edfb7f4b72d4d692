//! Stochastic validator for simulation.
//!
//! Each validator answers correctly with probability
//! `accuracy * (1 - difficulty_weight * d)`, where `d ~ U[0, 1)` is drawn
//! once per question and shared by all validators using the same difficulty
//! seed. Otherwise it picks a wrong label uniformly. All randomness is keyed
//! by (seed, question), so votes do not depend on query order.

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{Backend, PromptRendering};
use crate::domain::{AnswerLabel, BackendFailure, FailureKind, Question, SyntheticValidatorSpec};

/// Stable 64-bit key for a question id.
pub fn item_key(question_id: &str) -> u64 {
    let digest = Sha256::digest(question_id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng_for(seed: u64, item: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(item)))
}

/// The per-question difficulty draw in `[0, 1)`.
pub fn shared_difficulty(difficulty_seed: u64, item: u64) -> f64 {
    // Offset keeps this stream distinct from a validator that happens to
    // use the same seed value.
    rng_for(difficulty_seed ^ 0xD1FF_1C01_7E00_0000, item).random::<f64>()
}

/// Uniform index in `0..n` keyed by (seed, item).
pub fn keyed_index(seed: u64, item: u64, n: usize) -> usize {
    rng_for(seed, item).random_range(0..n)
}

pub fn correct_probability(spec: &SyntheticValidatorSpec, difficulty: f64) -> f64 {
    (spec.accuracy * (1.0 - spec.difficulty_weight * difficulty)).clamp(0.0, 1.0)
}

/// Index of the label emitted for one item with `n_options` options.
pub fn synthetic_choice(
    spec: &SyntheticValidatorSpec,
    item: u64,
    correct: usize,
    n_options: usize,
    difficulty: f64,
) -> usize {
    debug_assert!(correct < n_options && n_options >= 2);
    let mut rng = rng_for(spec.seed, item);
    if rng.random::<f64>() < correct_probability(spec, difficulty) {
        correct
    } else {
        let r = rng.random_range(0..n_options - 1);
        if r >= correct {
            r + 1
        } else {
            r
        }
    }
}

/// The raw response for `q`: a bare letter. The correct label is the
/// question's claimed answer, which must be marked correct.
pub fn query_synthetic(
    spec: &SyntheticValidatorSpec,
    q: &Question,
    difficulty: f64,
) -> Result<String, BackendFailure> {
    let correct = match (q.claimed_answer, q.ground_truth_correct) {
        (Some(label), Some(true)) if q.has_label(label) => label,
        _ => {
            return Err(BackendFailure::new(
                FailureKind::Config,
                "synthetic validators need a claimed answer marked correct",
            ))
        }
    };
    let idx = synthetic_choice(spec, item_key(&q.id), correct.index(), q.options.len(), difficulty);
    let label = AnswerLabel::from_index(idx).expect("index within option count");
    Ok(label.to_string())
}

#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    spec: SyntheticValidatorSpec,
}

impl SyntheticBackend {
    pub fn new(spec: SyntheticValidatorSpec) -> Self {
        Self { spec }
    }
}

#[async_trait]
impl Backend for SyntheticBackend {
    async fn query(&self, q: &Question, _: &PromptRendering) -> Result<String, BackendFailure> {
        let d = shared_difficulty(self.spec.difficulty_seed, item_key(&q.id));
        query_synthetic(&self.spec, q, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AnswerOption;

    fn spec(accuracy: f64, rho: f64, seed: u64) -> SyntheticValidatorSpec {
        SyntheticValidatorSpec {
            accuracy,
            difficulty_weight: rho,
            seed,
            difficulty_seed: 0,
        }
    }

    fn question(id: &str, m: usize, claim: usize) -> Question {
        Question {
            id: id.into(),
            stem: "s".into(),
            statements: vec![],
            question_line: None,
            options: (0..m)
                .map(|i| AnswerOption {
                    label: AnswerLabel::from_index(i).unwrap(),
                    text: i.to_string(),
                })
                .collect(),
            claimed_answer: AnswerLabel::from_index(claim),
            ground_truth_correct: Some(true),
        }
    }

    #[test]
    fn perfect_accuracy_always_correct() {
        let s = spec(1.0, 0.0, 3);
        for i in 0..500 {
            let q = question(&format!("q{i}"), 8, i % 8);
            let d = shared_difficulty(0, item_key(&q.id));
            assert_eq!(query_synthetic(&s, &q, d).unwrap(), q.claimed_answer.unwrap().to_string());
        }
    }

    #[test]
    fn zero_accuracy_never_correct_and_uniform_wrong() {
        let s = spec(0.0, 0.0, 11);
        let m = 4;
        let mut counts = [0usize; 4];
        let trials = 30_000;
        for i in 0..trials {
            let idx = synthetic_choice(&s, i as u64, 0, m, 0.5);
            assert_ne!(idx, 0);
            counts[idx] += 1;
        }
        // each wrong label ~ trials/3; 4 sigma band
        let expect = trials as f64 / 3.0;
        let sd = (trials as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for &c in &counts[1..] {
            assert!((c as f64 - expect).abs() < 4.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let s = spec(0.6, 0.5, 99);
        let a: Vec<usize> = (0..200).map(|i| synthetic_choice(&s, i, 2, 8, 0.3)).collect();
        let b: Vec<usize> = (0..200).map(|i| synthetic_choice(&s, i, 2, 8, 0.3)).collect();
        assert_eq!(a, b);
        let other = spec(0.6, 0.5, 100);
        let c: Vec<usize> = (0..200).map(|i| synthetic_choice(&other, i, 2, 8, 0.3)).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn difficulty_reduces_correctness() {
        let s = spec(0.9, 1.0, 0);
        assert!((correct_probability(&s, 0.0) - 0.9).abs() < 1e-15);
        assert!((correct_probability(&s, 0.5) - 0.45).abs() < 1e-15);
        assert_eq!(correct_probability(&spec(0.9, 0.0, 0), 0.99), 0.9);
    }

    #[test]
    fn requires_correct_claim() {
        let mut q = question("q", 4, 1);
        q.ground_truth_correct = Some(false);
        let err = query_synthetic(&spec(0.9, 0.0, 0), &q, 0.1).unwrap_err();
        assert_eq!(err.kind, FailureKind::Config);
    }
}
