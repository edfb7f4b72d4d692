//! Consensus validation of multiple-choice content.
//!
//! A question is rendered once, sent independently to every configured
//! validator, each raw reply is normalized to an option letter, and a
//! consensus policy (unanimous or k-of-n) decides whether the content is
//! approved. The [`stats`] module turns stored runs into reliability
//! reports: precision and recall against expert ground truth, Cohen's κ
//! between validators, Wilson intervals, proportion tests and error
//! compounding.

pub mod backends;
pub mod consensus;
pub mod domain;
pub mod error;
pub mod normalizer;
pub mod simulation;
pub mod stats;
pub mod store;

pub use consensus::{decide, decide_verdicts, rescore, Ensemble, ProgressFn, Validator};
pub use domain::{
    validate_question, AnswerLabel, AnswerOption, BackendFailure, ConfusionMatrix,
    ConsensusPolicy, ConsensusRule, EndpointConfig, FailureKind, Outcome, Question,
    RejectReason, ValidationRecord, ValidatorProfile, Verdict, Vote, FORMAT_VERSION,
};
pub use normalizer::{normalize, normalize_with, NormalizationOutcome, NormalizedResult, NormalizerConfig};
pub use store::{RunConfig, RunStore};
