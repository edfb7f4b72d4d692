//! Core data types shared by the pipeline, the store and the statistics.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::PolicyError;

/// Format version written to every persisted file and line.
pub const FORMAT_VERSION: u32 = 1;

/// A single canonical lowercase option letter in `a..=z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AnswerLabel(u8);

impl AnswerLabel {
    /// Builds a label from any ASCII letter, folding case.
    pub fn new(c: char) -> Option<Self> {
        if c.is_ascii_alphabetic() {
            Some(Self(c.to_ascii_lowercase() as u8))
        } else {
            None
        }
    }

    /// The label at zero-based position `index` (0 → 'a').
    pub fn from_index(index: usize) -> Option<Self> {
        if index < 26 {
            Some(Self(b'a' + index as u8))
        } else {
            None
        }
    }

    pub fn index(self) -> usize {
        (self.0 - b'a') as usize
    }

    pub fn as_char(self) -> char {
        self.0 as char
    }

    /// Labels `a`, `b`, … for the first `count` positions (capped at 26).
    pub fn first_n(count: usize) -> Vec<AnswerLabel> {
        (0..count.min(26)).filter_map(Self::from_index).collect()
    }
}

impl fmt::Display for AnswerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for AnswerLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => AnswerLabel::new(c).ok_or_else(|| format!("not a letter: {s:?}")),
            _ => Err(format!("label must be exactly one letter, got {s:?}")),
        }
    }
}

impl Serialize for AnswerLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AnswerLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: AnswerLabel,
    pub text: String,
}

/// A multiple-choice item.
///
/// `claimed_answer` is the generator's key; `ground_truth_correct` is the
/// expert verdict on that key and is used only for scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub stem: String,
    #[serde(default)]
    pub statements: Vec<String>,
    /// Line shown after the numbered statements, e.g. "Which of the
    /// statements given above is/are correct?".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_line: Option<String>,
    pub options: Vec<AnswerOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claimed_answer: Option<AnswerLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_correct: Option<bool>,
}

/// A violated structural invariant of a [`Question`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuestionIssue {
    EmptyId,
    TooFewOptions(usize),
    DuplicateLabel(AnswerLabel),
    NonContiguousLabel { position: usize, found: AnswerLabel },
    ClaimNotAnOption(AnswerLabel),
    GroundTruthWithoutClaim,
}

impl QuestionIssue {
    /// Name of the schema field the issue concerns.
    pub fn field(&self) -> &'static str {
        match self {
            QuestionIssue::EmptyId => "id",
            QuestionIssue::TooFewOptions(_)
            | QuestionIssue::DuplicateLabel(_)
            | QuestionIssue::NonContiguousLabel { .. } => "options",
            QuestionIssue::ClaimNotAnOption(_) => "claimed_answer",
            QuestionIssue::GroundTruthWithoutClaim => "ground_truth_correct",
        }
    }
}

impl fmt::Display for QuestionIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuestionIssue::EmptyId => write!(f, "empty question id"),
            QuestionIssue::TooFewOptions(n) => {
                write!(f, "at least two options required, found {n}")
            }
            QuestionIssue::DuplicateLabel(l) => write!(f, "duplicate option label '{l}'"),
            QuestionIssue::NonContiguousLabel { position, found } => write!(
                f,
                "option labels must run from 'a' in order: position {} has '{found}'",
                position + 1
            ),
            QuestionIssue::ClaimNotAnOption(l) => {
                write!(f, "claimed answer not an option: '{l}'")
            }
            QuestionIssue::GroundTruthWithoutClaim => {
                write!(f, "ground_truth_correct requires a claimed_answer")
            }
        }
    }
}

impl Question {
    /// Every violated invariant; empty means the question is valid.
    pub fn validate(&self) -> Vec<QuestionIssue> {
        let mut issues = Vec::new();
        if self.id.trim().is_empty() {
            issues.push(QuestionIssue::EmptyId);
        }
        if self.options.len() < 2 {
            issues.push(QuestionIssue::TooFewOptions(self.options.len()));
        }
        let mut seen = BTreeSet::new();
        for (position, opt) in self.options.iter().enumerate() {
            if !seen.insert(opt.label) {
                issues.push(QuestionIssue::DuplicateLabel(opt.label));
            } else if opt.label.index() != position {
                issues.push(QuestionIssue::NonContiguousLabel {
                    position,
                    found: opt.label,
                });
            }
        }
        if let Some(claim) = self.claimed_answer {
            if !seen.contains(&claim) {
                issues.push(QuestionIssue::ClaimNotAnOption(claim));
            }
        } else if self.ground_truth_correct.is_some() {
            issues.push(QuestionIssue::GroundTruthWithoutClaim);
        }
        issues
    }

    pub fn labels(&self) -> Vec<AnswerLabel> {
        self.options.iter().map(|o| o.label).collect()
    }

    pub fn has_label(&self, label: AnswerLabel) -> bool {
        self.options.iter().any(|o| o.label == label)
    }

    /// True when the item can be scored: it has both a key and a verdict on it.
    pub fn is_scored(&self) -> bool {
        self.claimed_answer.is_some() && self.ground_truth_correct.is_some()
    }
}

/// Free-function form of [`Question::validate`].
pub fn validate_question(q: &Question) -> Result<(), Vec<QuestionIssue>> {
    let issues = q.validate();
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}

/// Settings for one validator, keyed by the backend kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EndpointConfig {
    HttpEndpoint(HttpEndpointConfig),
    Replay(ReplayConfig),
    Synthetic(SyntheticValidatorSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    /// Sampling temperature override; the endpoint default is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_connect_timeout_secs")]
    pub connect_timeout_secs: f64,
    #[serde(default = "default_total_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_max_in_flight() -> usize {
    4
}
fn default_connect_timeout_secs() -> f64 {
    10.0
}
fn default_total_timeout_secs() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub fixture: PathBuf,
}

/// A stochastic validator: correct with probability
/// `accuracy * (1 - difficulty_weight * d)` where `d` is a per-question
/// difficulty draw shared by every synthetic validator with the same
/// `difficulty_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticValidatorSpec {
    pub accuracy: f64,
    #[serde(default)]
    pub difficulty_weight: f64,
    pub seed: u64,
    #[serde(default)]
    pub difficulty_seed: u64,
}

impl SyntheticValidatorSpec {
    pub fn check(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(format!("accuracy {} outside [0, 1]", self.accuracy));
        }
        if !(0.0..=1.0).contains(&self.difficulty_weight) {
            return Err(format!(
                "difficulty_weight {} outside [0, 1]",
                self.difficulty_weight
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatorProfile {
    pub name: String,
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
}

impl ValidatorProfile {
    pub fn kind_name(&self) -> &'static str {
        match self.endpoint {
            EndpointConfig::HttpEndpoint(_) => "http-endpoint",
            EndpointConfig::Replay(_) => "replay",
            EndpointConfig::Synthetic(_) => "synthetic",
        }
    }
}

/// Checks the profile-level invariants: distinct names, parameters in range.
pub fn check_profiles(profiles: &[ValidatorProfile]) -> Result<(), String> {
    let mut names = BTreeSet::new();
    for p in profiles {
        if p.name.is_empty() {
            return Err("validator name must not be empty".into());
        }
        if !names.insert(p.name.as_str()) {
            return Err(format!("duplicate validator name {:?}", p.name));
        }
        if let EndpointConfig::Synthetic(spec) = &p.endpoint {
            spec.check().map_err(|e| format!("validator {:?}: {e}", p.name))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    Timeout,
    Auth,
    Protocol,
    HttpStatus,
    Transport,
    MissingFixture,
    Config,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FailureKind::Timeout => "timeout",
            FailureKind::Auth => "auth",
            FailureKind::Protocol => "protocol",
            FailureKind::HttpStatus => "http-status",
            FailureKind::Transport => "transport",
            FailureKind::MissingFixture => "missing-fixture",
            FailureKind::Config => "config",
        };
        f.write_str(s)
    }
}

/// Why a backend produced no response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind}: {detail}")]
pub struct BackendFailure {
    pub kind: FailureKind,
    pub detail: String,
}

impl BackendFailure {
    pub fn new(kind: FailureKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Label(AnswerLabel),
    Unparseable,
    BackendError(BackendFailure),
}

impl Verdict {
    pub fn label(&self) -> Option<AnswerLabel> {
        match self {
            Verdict::Label(l) => Some(*l),
            _ => None,
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, Verdict::BackendError(_))
    }
}

/// One validator's parsed verdict on one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub validator: String,
    pub question_id: String,
    pub raw_response: String,
    pub verdict: Verdict,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConsensusRule {
    Unanimous,
    KOfN(usize),
}

impl fmt::Display for ConsensusRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConsensusRule::Unanimous => f.write_str("unanimous"),
            ConsensusRule::KOfN(k) => write!(f, "k-of-n:{k}"),
        }
    }
}

impl FromStr for ConsensusRule {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "unanimous" {
            return Ok(ConsensusRule::Unanimous);
        }
        let k = s
            .strip_prefix("k-of-n:")
            .ok_or_else(|| PolicyError::Unknown(s.clone()))?;
        match k.parse::<usize>() {
            Ok(k) if k > 0 => Ok(ConsensusRule::KOfN(k)),
            _ => Err(PolicyError::Unknown(s)),
        }
    }
}

impl Serialize for ConsensusRule {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConsensusRule {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConsensusPolicy {
    pub rule: ConsensusRule,
    #[serde(default = "default_true")]
    pub require_claim_match: bool,
}

impl ConsensusPolicy {
    pub fn unanimous() -> Self {
        Self {
            rule: ConsensusRule::Unanimous,
            require_claim_match: true,
        }
    }

    pub fn k_of_n(k: usize) -> Self {
        Self {
            rule: ConsensusRule::KOfN(k),
            require_claim_match: true,
        }
    }

    pub fn with_claim_match(mut self, require: bool) -> Self {
        self.require_claim_match = require;
        self
    }

    /// Votes a label needs to win with `n` validators.
    pub fn quorum(&self, n: usize) -> usize {
        match self.rule {
            ConsensusRule::Unanimous => n,
            ConsensusRule::KOfN(k) => k,
        }
    }

    /// Checks `n/2 < k <= n` for k-of-n rules.
    pub fn check_for(&self, n: usize) -> Result<(), PolicyError> {
        if n == 0 {
            return Err(PolicyError::NoVotes);
        }
        if let ConsensusRule::KOfN(k) = self.rule {
            if 2 * k <= n || k > n {
                return Err(PolicyError::InvalidQuorum { k, n });
            }
        }
        Ok(())
    }
}

impl fmt::Display for ConsensusPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.rule)?;
        if !self.require_claim_match {
            f.write_str(" (no claim match)")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Disagreement,
    ContradictsClaim,
    QuorumNotReached,
    VoteFailure,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::Disagreement => "disagreement",
            RejectReason::ContradictsClaim => "contradicts-claim",
            RejectReason::QuorumNotReached => "quorum-not-reached",
            RejectReason::VoteFailure => "vote-failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Approved(AnswerLabel),
    Rejected(RejectReason),
}

impl Outcome {
    pub fn is_approved(&self) -> bool {
        matches!(self, Outcome::Approved(_))
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Approved(l) => write!(f, "approved({l})"),
            Outcome::Rejected(r) => write!(f, "rejected({r})"),
        }
    }
}

/// The unit persisted per question and run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub format_version: u32,
    pub question: Question,
    pub votes: Vec<Vote>,
    pub outcome: Outcome,
    pub policy: ConsensusPolicy,
    pub timestamp: DateTime<Utc>,
}

impl ValidationRecord {
    pub fn vote_of(&self, validator: &str) -> Option<&Vote> {
        self.votes.iter().find(|v| v.validator == validator)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn approved(&self) -> u64 {
        self.tp + self.fp
    }
}
