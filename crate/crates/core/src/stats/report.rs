//! Aggregates a run's records into one reliability report and renders it
//! as plain-text tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::agreement::cohen_kappa;
use super::compounding::{compounding_row, CompoundingRow};
use super::hypothesis::{power_two_proportions, two_proportion_test, ARCSINE_POWER_METHOD, POOLED_Z_METHOD};
use super::interval::{wilson_interval, IntervalEstimate};
use super::metrics::{confusion_from, precision_recall_f1, Metric};
use crate::consensus::rescore;
use crate::domain::{
    AnswerLabel, ConfusionMatrix, ConsensusPolicy, ConsensusRule, Outcome, ValidationRecord,
    Verdict, FORMAT_VERSION,
};

/// A named way of scoring stored votes: a validator subset and a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub name: String,
    /// Validators whose votes count; `None` means all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validators: Option<Vec<String>>,
    pub policy: ConsensusPolicy,
}

impl Configuration {
    pub fn all(policy: ConsensusPolicy, n_validators: usize) -> Self {
        Self {
            name: policy_name(&policy, n_validators),
            validators: None,
            policy,
        }
    }

    /// For n ≥ 3: unanimous over the first two validators, unanimous over
    /// all, and simple majority; for n = 2 only unanimous. The run policy
    /// is appended when it is not already part of the suite.
    pub fn standard_suite(validator_names: &[String], run_policy: ConsensusPolicy) -> Vec<Self> {
        let n = validator_names.len();
        let claim = run_policy.require_claim_match;
        let mut suite = Vec::new();
        if n >= 3 {
            suite.push(Configuration {
                name: "2-model unanimous".into(),
                validators: Some(validator_names[..2].to_vec()),
                policy: ConsensusPolicy::unanimous().with_claim_match(claim),
            });
        }
        suite.push(Self::all(ConsensusPolicy::unanimous().with_claim_match(claim), n));
        if n >= 3 {
            suite.push(Self::all(ConsensusPolicy::k_of_n(n / 2 + 1).with_claim_match(claim), n));
        }
        let run = Self::all(run_policy, n);
        if !suite.iter().any(|c| c.validators.is_none() && same_rule(&c.policy, &run.policy, n)) {
            suite.push(run);
        }
        suite
    }
}

fn same_rule(a: &ConsensusPolicy, b: &ConsensusPolicy, n: usize) -> bool {
    a.quorum(n) == b.quorum(n) && a.require_claim_match == b.require_claim_match
}

pub fn policy_name(policy: &ConsensusPolicy, n: usize) -> String {
    let base = match policy.rule {
        ConsensusRule::Unanimous => format!("{n}-model unanimous"),
        ConsensusRule::KOfN(k) if k == n => format!("{n}-model unanimous"),
        ConsensusRule::KOfN(k) => format!("{k}-of-{n}"),
    };
    if policy.require_claim_match {
        base
    } else {
        format!("{base} (no claim match)")
    }
}

/// Generator accuracy measured outside the run, e.g. on a larger sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineCounts {
    pub correct: u64,
    pub total: u64,
}

impl std::str::FromStr for BaselineCounts {
    type Err = String;

    /// Parses `correct/total`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once('/')
            .ok_or_else(|| format!("expected correct/total, got {s:?}"))?;
        let correct: u64 = a.trim().parse().map_err(|_| format!("bad count {a:?}"))?;
        let total: u64 = b.trim().parse().map_err(|_| format!("bad count {b:?}"))?;
        if total == 0 || correct > total {
            return Err(format!("need 0 <= correct <= total and total > 0, got {s}"));
        }
        Ok(Self { correct, total })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub confidence: f64,
    pub compounding_steps: Vec<u32>,
    /// Replaces the baseline derived from the records' ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineCounts>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            confidence: 0.95,
            compounding_steps: vec![5, 10, 20],
            baseline: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineSource {
    /// Share of scored records whose claimed answer is correct.
    Records,
    Supplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub source: BaselineSource,
    pub correct: u64,
    pub scored: u64,
    pub accuracy: Metric,
    pub interval: Option<IntervalEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationRow {
    pub name: String,
    pub validators: Vec<String>,
    pub policy: ConsensusPolicy,
    pub decided: u64,
    /// Records the policy could not be applied to (e.g. no claimed answer
    /// under claim matching).
    pub undecidable: u64,
    pub approved: u64,
    pub coverage: Metric,
    pub outcomes: BTreeMap<String, u64>,
    pub confusion: ConfusionMatrix,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
    pub precision_interval: Option<IntervalEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub a: String,
    pub b: String,
    pub n_items: usize,
    pub observed_agreement: Metric,
    pub kappa: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCounts {
    pub name: String,
    pub successes: u64,
    pub trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub from: RateCounts,
    pub to: RateCounts,
    pub effect_pp: Metric,
    pub statistic: Metric,
    pub p_value: Metric,
    pub method: String,
    /// Power to detect the observed difference at level `alpha`, using the
    /// smaller group size.
    pub power: Metric,
    pub power_method: String,
}

/// Compares the rate of `to` against `from` with the pooled z-test.
pub fn compare_rates(from: RateCounts, to: RateCounts, alpha: f64) -> ComparisonRow {
    let label = format!("{} vs. {}", from.name, to.name);
    let effect_pp = if from.trials == 0 || to.trials == 0 {
        Metric::undefined("empty group")
    } else {
        Metric::Value(
            (to.successes as f64 / to.trials as f64 - from.successes as f64 / from.trials as f64) * 100.0,
        )
    };
    let (statistic, p_value) = match two_proportion_test(from.successes, from.trials, to.successes, to.trials) {
        Ok(t) => (Metric::Value(t.statistic), Metric::Value(t.p_value)),
        Err(e) => (Metric::undefined(e.to_string()), Metric::undefined(e.to_string())),
    };
    let power = if from.trials == 0 || to.trials == 0 {
        Metric::undefined("empty group")
    } else {
        let p1 = from.successes as f64 / from.trials as f64;
        let p2 = to.successes as f64 / to.trials as f64;
        match power_two_proportions(p1, p2, from.trials.min(to.trials), alpha) {
            Ok(v) => Metric::Value(v),
            Err(e) => Metric::undefined(e.to_string()),
        }
    };
    ComparisonRow {
        label,
        from,
        to,
        effect_pp,
        statistic,
        p_value,
        method: POOLED_Z_METHOD.into(),
        power,
        power_method: ARCSINE_POWER_METHOD.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub format_version: u32,
    pub n_records: u64,
    pub n_scored: u64,
    pub validators: Vec<String>,
    pub primary: Option<String>,
    pub confidence: f64,
    pub baseline: BaselineRow,
    pub configurations: Vec<ConfigurationRow>,
    pub agreement: Vec<AgreementRow>,
    pub comparisons: Vec<ComparisonRow>,
    pub compounding: Vec<CompoundingRow>,
    pub footnotes: Vec<String>,
}

impl ReliabilityReport {
    pub fn configuration(&self, name: &str) -> Option<&ConfigurationRow> {
        self.configurations.iter().find(|c| c.name == name)
    }

    pub fn primary_row(&self) -> Option<&ConfigurationRow> {
        self.primary.as_deref().and_then(|p| self.configuration(p))
    }
}

/// Category used for agreement: a label, an unparseable answer, or a
/// backend failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum VerdictCategory {
    Label(AnswerLabel),
    Unparseable,
    Failed,
}

impl From<&Verdict> for VerdictCategory {
    fn from(v: &Verdict) -> Self {
        match v {
            Verdict::Label(l) => VerdictCategory::Label(*l),
            Verdict::Unparseable => VerdictCategory::Unparseable,
            Verdict::BackendError(_) => VerdictCategory::Failed,
        }
    }
}

fn score_configuration(records: &[ValidationRecord], cfg: &Configuration, all: &[String], confidence: f64) -> ConfigurationRow {
    let mut outcomes: BTreeMap<String, u64> = BTreeMap::new();
    let mut pairs = Vec::new();
    let (mut decided, mut undecidable, mut approved) = (0u64, 0u64, 0u64);
    for r in records {
        match rescore(r, cfg.validators.as_deref(), &cfg.policy) {
            Ok(outcome) => {
                decided += 1;
                let key = match outcome {
                    Outcome::Approved(_) => {
                        approved += 1;
                        "approved".to_string()
                    }
                    Outcome::Rejected(reason) => format!("rejected:{reason}"),
                };
                *outcomes.entry(key).or_default() += 1;
                if let (Some(_), Some(correct)) = (r.question.claimed_answer, r.question.ground_truth_correct) {
                    pairs.push((outcome.is_approved(), correct));
                }
            }
            Err(_) => undecidable += 1,
        }
    }
    let confusion = confusion_from(pairs);
    let prf = precision_recall_f1(&confusion);
    let precision_interval = wilson_interval(confusion.tp, confusion.approved(), confidence).ok();
    ConfigurationRow {
        name: cfg.name.clone(),
        validators: cfg.validators.clone().unwrap_or_else(|| all.to_vec()),
        policy: cfg.policy,
        decided,
        undecidable,
        approved,
        coverage: Metric::ratio(approved, decided, "no decided records"),
        outcomes,
        confusion,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        precision_interval,
    }
}

fn agreement_rows(records: &[ValidationRecord], names: &[String]) -> Vec<AgreementRow> {
    let mut rows = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let (xs, ys): (Vec<VerdictCategory>, Vec<VerdictCategory>) = records
                .iter()
                .filter_map(|r| {
                    let x = VerdictCategory::from(&r.vote_of(a)?.verdict);
                    let y = VerdictCategory::from(&r.vote_of(b)?.verdict);
                    Some((x, y))
                })
                .unzip();
            let (observed_agreement, kappa) = match cohen_kappa(&xs, &ys) {
                Ok(s) => (Metric::Value(s.observed_agreement), Metric::Value(s.kappa)),
                Err(e) => (Metric::undefined(e.to_string()), Metric::undefined(e.to_string())),
            };
            rows.push(AgreementRow {
                a: a.clone(),
                b: b.clone(),
                n_items: xs.len(),
                observed_agreement,
                kappa,
            });
        }
    }
    rows
}

pub const FOOTNOTES: &[&str] = &[
    "Precision is the share of approved items whose claimed answer is correct; coverage is the share of items approved.",
    "F1 is the harmonic mean of precision and recall computed from the confusion counts.",
    "Intervals are Wilson score intervals.",
    "Power uses the arcsine (Cohen's h) approximation with the smaller group size.",
    "p-values come from a pooled two-proportion z-test that treats configurations as independent samples; configurations scored on the same items are not independent, so read them as indicative.",
    "Compounded error is 1-(1-e)^k with e = 1 - precision (baseline: 1 - generator accuracy).",
];

/// Builds the full report. Statistics that cannot be computed are marked
/// undefined instead of failing the report.
pub fn build_report(
    records: &[ValidationRecord],
    validator_names: &[String],
    configurations: &[Configuration],
    primary: Option<&str>,
    options: &ReportOptions,
) -> ReliabilityReport {
    let scored: Vec<bool> = records
        .iter()
        .filter(|r| r.question.claimed_answer.is_some())
        .filter_map(|r| r.question.ground_truth_correct)
        .collect();
    let n_scored = scored.len() as u64;
    let (source, correct, total) = match options.baseline {
        Some(b) => (BaselineSource::Supplied, b.correct, b.total),
        None => (BaselineSource::Records, scored.iter().filter(|&&c| c).count() as u64, n_scored),
    };
    let baseline = BaselineRow {
        source,
        correct,
        scored: total,
        accuracy: Metric::ratio(correct, total, "no scored records"),
        interval: wilson_interval(correct, total, options.confidence).ok(),
    };

    let rows: Vec<ConfigurationRow> = configurations
        .iter()
        .map(|c| score_configuration(records, c, validator_names, options.confidence))
        .collect();

    let baseline_rate = RateCounts {
        name: "Baseline".into(),
        successes: correct,
        trials: total,
    };
    let alpha = 1.0 - options.confidence;
    let rate = |row: &ConfigurationRow| RateCounts {
        name: row.name.clone(),
        successes: row.confusion.tp,
        trials: row.confusion.approved(),
    };
    let mut comparisons: Vec<ComparisonRow> = Vec::new();
    if let Some(first) = rows.first() {
        comparisons.push(compare_rates(baseline_rate.clone(), rate(first), alpha));
    }
    for pair in rows.windows(2) {
        comparisons.push(compare_rates(rate(&pair[0]), rate(&pair[1]), alpha));
    }

    let mut compounding = Vec::new();
    let steps = &options.compounding_steps;
    if let Some(acc) = baseline.accuracy.value() {
        compounding.extend(compounding_row("Baseline", 1.0 - acc, steps).ok());
    }
    for row in &rows {
        if let Some(p) = row.precision.value() {
            compounding.extend(compounding_row(&row.name, 1.0 - p, steps).ok());
        }
    }

    ReliabilityReport {
        format_version: FORMAT_VERSION,
        n_records: records.len() as u64,
        n_scored,
        validators: validator_names.to_vec(),
        primary: primary
            .map(str::to_string)
            .or_else(|| rows.first().map(|r| r.name.clone())),
        confidence: options.confidence,
        baseline,
        configurations: rows,
        agreement: agreement_rows(records, validator_names),
        comparisons,
        compounding,
        footnotes: FOOTNOTES.iter().map(|s| s.to_string()).collect(),
    }
}

/// The report a run gets: the standard configuration suite with `policy`
/// as the primary configuration.
pub fn build_standard_report(
    records: &[ValidationRecord],
    validator_names: &[String],
    policy: ConsensusPolicy,
    options: &ReportOptions,
) -> ReliabilityReport {
    let suite = Configuration::standard_suite(validator_names, policy);
    let primary = policy_name(&policy, validator_names.len());
    build_report(records, validator_names, &suite, Some(&primary), options)
}

fn pct_of(count: u64, total: u64) -> String {
    Metric::ratio(count, total, "").percent()
}

fn signed_pp(m: &Metric) -> String {
    match m.value() {
        Some(v) => format!("{v:+.1}%"),
        None => "undefined".into(),
    }
}

fn p_value_text(m: &Metric) -> String {
    match m.value() {
        Some(v) if v < 0.001 => "<0.001".into(),
        Some(v) => format!("{v:.3}"),
        None => "undefined".into(),
    }
}

fn interval_text(ci: Option<&IntervalEstimate>) -> String {
    match ci {
        Some(ci) => format!("{:.1}% - {:.1}%", ci.lower * 100.0, ci.upper * 100.0),
        None => "undefined".into(),
    }
}

/// Left-aligned first column, right-aligned others.
fn table(out: &mut String, title: &str, header: &[&str], rows: &[Vec<String>]) {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, cell) in r.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "{}", line(header.to_vec()));
    let total: usize = widths.iter().sum::<usize>() + 2 * (cols - 1);
    let _ = writeln!(out, "{}", "-".repeat(total));
    for r in rows {
        let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
    }
    out.push('\n');
}

pub fn render_comparisons(out: &mut String, rows: &[ComparisonRow]) {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|c| {
            vec![
                c.label.clone(),
                p_value_text(&c.p_value),
                signed_pp(&c.effect_pp),
                c.power.fixed(2),
            ]
        })
        .collect();
    table(out, "Configuration comparisons", &["Comparison", "p-value", "Effect", "Power"], &body);
}

pub fn render_compounding(out: &mut String, rows: &[CompoundingRow]) {
    let Some(first) = rows.first() else {
        table(out, "Error compounding", &["Error rate"], &[vec!["undefined".into()]]);
        return;
    };
    let headers: Vec<String> = std::iter::once("Error rate".to_string())
        .chain(first.steps.iter().map(|k| format!("{k} steps")))
        .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            std::iter::once(format!("{:.1}% ({})", r.step_error * 100.0, r.label))
                .chain(r.compounded.iter().map(|v| format!("{:.1}%", v * 100.0)))
                .collect()
        })
        .collect();
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    table(out, "Error compounding", &header_refs, &body);
}

/// Plain-text tables: performance, outcomes, agreement, comparisons,
/// intervals and compounding.
pub fn render_text(report: &ReliabilityReport) -> String {
    let mut out = String::new();

    let mut perf = vec![vec![
        "Generator".to_string(),
        report.baseline.accuracy.percent(),
        "-".to_string(),
        "-".to_string(),
    ]];
    for row in &report.configurations {
        perf.push(vec![
            row.name.clone(),
            row.precision.percent(),
            row.f1.fixed(3),
            row.coverage.percent(),
        ]);
    }
    table(&mut out, "Core performance metrics", &["Configuration", "Precision", "F1", "Coverage"], &perf);

    match report.primary_row() {
        Some(row) => {
            let m = row.confusion;
            let total = m.total();
            let body = vec![
                vec!["True Positives".into(), m.tp.to_string(), pct_of(m.tp, total)],
                vec!["False Positives".into(), m.fp.to_string(), pct_of(m.fp, total)],
                vec!["True Negatives".into(), m.tn.to_string(), pct_of(m.tn, total)],
                vec!["False Negatives".into(), m.fn_.to_string(), pct_of(m.fn_, total)],
            ];
            table(&mut out, &format!("Validation outcomes ({})", row.name), &["Outcome", "Count", "Share"], &body);
        }
        None => table(&mut out, "Validation outcomes", &["Outcome", "Count", "Share"], &[vec!["undefined".into(), "-".into(), "-".into()]]),
    }

    let agreement: Vec<Vec<String>> = report
        .agreement
        .iter()
        .map(|a| vec![format!("{} - {}", a.a, a.b), a.kappa.fixed(2), a.observed_agreement.percent()])
        .collect();
    table(&mut out, "Model agreement", &["Model pair", "Kappa", "Agreement"], &agreement);

    render_comparisons(&mut out, &report.comparisons);

    let ci: Vec<Vec<String>> = report
        .configurations
        .iter()
        .map(|r| vec![r.name.clone(), interval_text(r.precision_interval.as_ref())])
        .collect();
    let title = format!("Precision confidence intervals ({:.0}%)", report.confidence * 100.0);
    table(&mut out, &title, &["Configuration", "CI"], &ci);

    render_compounding(&mut out, &report.compounding);

    for (i, note) in report.footnotes.iter().enumerate() {
        let _ = writeln!(out, "[{}] {note}", i + 1);
    }
    out
}
