//! The validation pipeline: render once, ask every validator independently,
//! normalize, then apply the consensus policy.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use chrono::Utc;
use futures::stream::{self, StreamExt};
use futures::future::join_all;
use tracing::info;

use crate::backends::{build_backend, render_prompt, Backend, ResponseCache};
use crate::domain::{
    AnswerLabel, ConsensusPolicy, ConsensusRule, Outcome, Question, RejectReason, ValidationRecord,
    Verdict, Vote, FORMAT_VERSION,
};
use crate::error::{BatchError, ConfigError, PolicyError};
use crate::normalizer::{normalize_with, NormalizerConfig};
use crate::store::{RunConfig, RunStore};

/// Applies `policy` to a set of verdicts.
pub fn decide_verdicts<'a, I>(
    verdicts: I,
    claimed: Option<AnswerLabel>,
    policy: &ConsensusPolicy,
) -> Result<Outcome, PolicyError>
where
    I: IntoIterator<Item = &'a Verdict>,
{
    let verdicts: Vec<&Verdict> = verdicts.into_iter().collect();
    policy.check_for(verdicts.len())?;
    if policy.require_claim_match && claimed.is_none() {
        return Err(PolicyError::MissingClaim);
    }
    if verdicts.iter().any(|v| v.is_failure()) {
        return Ok(Outcome::Rejected(RejectReason::VoteFailure));
    }

    let winner = match policy.rule {
        ConsensusRule::Unanimous => {
            let labels: BTreeSet<Option<AnswerLabel>> = verdicts.iter().map(|v| v.label()).collect();
            match labels.into_iter().collect::<Vec<_>>().as_slice() {
                [Some(x)] => *x,
                _ => return Ok(Outcome::Rejected(RejectReason::Disagreement)),
            }
        }
        ConsensusRule::KOfN(k) => {
            let mut tally: BTreeMap<AnswerLabel, usize> = BTreeMap::new();
            for l in verdicts.iter().filter_map(|v| v.label()) {
                *tally.entry(l).or_default() += 1;
            }
            match tally.into_iter().find(|&(_, count)| count >= k) {
                Some((x, _)) => x,
                None => return Ok(Outcome::Rejected(RejectReason::QuorumNotReached)),
            }
        }
    };

    if policy.require_claim_match && claimed != Some(winner) {
        return Ok(Outcome::Rejected(RejectReason::ContradictsClaim));
    }
    Ok(Outcome::Approved(winner))
}

pub fn decide(
    votes: &[Vote],
    claimed: Option<AnswerLabel>,
    policy: &ConsensusPolicy,
) -> Result<Outcome, PolicyError> {
    decide_verdicts(votes.iter().map(|v| &v.verdict), claimed, policy)
}

/// Re-scores a stored record under another policy, optionally restricted to
/// a subset of its validators. No backend is touched.
pub fn rescore(
    record: &ValidationRecord,
    validators: Option<&[String]>,
    policy: &ConsensusPolicy,
) -> Result<Outcome, PolicyError> {
    let votes: Vec<&Verdict> = match validators {
        None => record.votes.iter().map(|v| &v.verdict).collect(),
        Some(names) => names
            .iter()
            .filter_map(|n| record.vote_of(n).map(|v| &v.verdict))
            .collect(),
    };
    decide_verdicts(votes, record.question.claimed_answer, policy)
}

#[derive(Clone)]
pub struct Validator {
    pub name: String,
    pub backend: Arc<dyn Backend>,
}

impl Validator {
    pub fn new(name: impl Into<String>, backend: Arc<dyn Backend>) -> Self {
        Self {
            name: name.into(),
            backend,
        }
    }
}

/// Called after each record of a batch with (completed, pending total).
pub type ProgressFn = Arc<dyn Fn(usize, usize) + Send + Sync>;

pub struct Ensemble {
    validators: Vec<Validator>,
    policy: ConsensusPolicy,
    normalizer: NormalizerConfig,
    parallelism: usize,
    progress: Option<ProgressFn>,
}

impl Ensemble {
    pub fn new(validators: Vec<Validator>, policy: ConsensusPolicy) -> Result<Self, ConfigError> {
        if validators.len() < 2 {
            return Err(ConfigError::TooFewValidators(validators.len()));
        }
        let mut names = HashSet::new();
        for v in &validators {
            if !names.insert(v.name.as_str()) {
                return Err(ConfigError::Profile(format!("duplicate validator name {:?}", v.name)));
            }
        }
        policy.check_for(validators.len())?;
        Ok(Self {
            validators,
            policy,
            normalizer: NormalizerConfig::default(),
            parallelism: 4,
            progress: None,
        })
    }

    /// Builds every backend named in a run configuration.
    pub fn from_config(config: &RunConfig, base_dir: &Path) -> Result<Self, ConfigError> {
        config.check()?;
        let cache = match &config.cache_dir {
            Some(dir) => Some(ResponseCache::open(base_dir.join(dir)).map_err(|e| {
                ConfigError::Profile(format!("cannot open cache: {e}"))
            })?),
            None => None,
        };
        let validators = config
            .validators
            .iter()
            .map(|p| Ok(Validator::new(&p.name, build_backend(p, base_dir, cache.as_ref())?)))
            .collect::<Result<Vec<_>, ConfigError>>()?;
        Ok(Self::new(validators, config.policy)?.with_parallelism(config.parallelism))
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn with_progress(mut self, progress: ProgressFn) -> Self {
        self.progress = Some(progress);
        self
    }

    pub fn with_normalizer(mut self, normalizer: NormalizerConfig) -> Self {
        self.normalizer = normalizer;
        self
    }

    pub fn policy(&self) -> &ConsensusPolicy {
        &self.policy
    }

    pub fn validator_names(&self) -> Vec<String> {
        self.validators.iter().map(|v| v.name.clone()).collect()
    }

    async fn ask(&self, validator: &Validator, q: &Question, allowed: &BTreeSet<AnswerLabel>) -> Vote {
        let rendering = render_prompt(q);
        let started = Instant::now();
        let result = validator.backend.query(q, &rendering).await;
        let latency_ms = if validator.backend.is_remote() {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        let (raw_response, verdict) = match result {
            Ok(raw) => {
                let verdict = normalize_with(&raw, allowed, &self.normalizer).into_verdict();
                (raw, verdict)
            }
            Err(failure) => (String::new(), Verdict::BackendError(failure)),
        };
        Vote {
            validator: validator.name.clone(),
            question_id: q.id.clone(),
            raw_response,
            verdict,
            latency_ms,
        }
    }

    /// Validates one question. Backend failures end up in the votes; the
    /// only error is a policy that cannot be applied to this question.
    pub async fn run_validation(&self, q: &Question) -> Result<ValidationRecord, PolicyError> {
        if self.policy.require_claim_match && q.claimed_answer.is_none() {
            return Err(PolicyError::MissingClaim);
        }
        let allowed: BTreeSet<AnswerLabel> = q.labels().into_iter().collect();
        let votes = join_all(self.validators.iter().map(|v| self.ask(v, q, &allowed))).await;
        let outcome = decide(&votes, q.claimed_answer, &self.policy)?;
        Ok(ValidationRecord {
            format_version: FORMAT_VERSION,
            question: q.clone(),
            votes,
            outcome,
            policy: self.policy,
            timestamp: Utc::now(),
        })
    }

    /// Validates a dataset with bounded parallelism. Records are appended to
    /// `store` in input order; with `resume`, questions already recorded
    /// there are not re-queried.
    pub async fn run_batch(
        &self,
        dataset: &[Question],
        store: Option<&RunStore>,
        resume: bool,
    ) -> Result<Vec<ValidationRecord>, BatchError> {
        let mut ids = HashSet::new();
        for q in dataset {
            if !ids.insert(q.id.as_str()) {
                return Err(BatchError::DuplicateQuestion(q.id.clone()));
            }
            if self.policy.require_claim_match && q.claimed_answer.is_none() {
                return Err(BatchError::Config(ConfigError::Question {
                    id: q.id.clone(),
                    source: PolicyError::MissingClaim,
                }));
            }
        }

        let mut existing: BTreeMap<String, ValidationRecord> = BTreeMap::new();
        if resume {
            if let Some(store) = store {
                for r in store.records()? {
                    existing.insert(r.question.id.clone(), r);
                }
            }
        }

        let pending: Vec<&Question> = dataset.iter().filter(|q| !existing.contains_key(&q.id)).collect();
        info!(total = dataset.len(), pending = pending.len(), "starting batch");

        let total = pending.len();
        let mut computed: BTreeMap<String, ValidationRecord> = BTreeMap::new();
        let mut results = stream::iter(pending)
            .map(|q| async move { self.run_validation(q).await })
            .buffered(self.parallelism);
        while let Some(record) = results.next().await {
            let record = record.map_err(|e| BatchError::Config(e.into()))?;
            if let Some(store) = store {
                store.append_record(&record)?;
            }
            computed.insert(record.question.id.clone(), record);
            if let Some(progress) = &self.progress {
                progress(computed.len(), total);
            }
        }

        Ok(dataset
            .iter()
            .filter_map(|q| existing.remove(&q.id).or_else(|| computed.remove(&q.id)))
            .collect())
    }
}
