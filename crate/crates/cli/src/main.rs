//! `ensval`: run consensus validation, rebuild reports, simulate ensembles
//! and tabulate error compounding.

use std::fmt::Write as _;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use ensval_core::domain::ConsensusRule;
use ensval_core::error::{BatchError, ConfigError};
use ensval_core::simulation::{simulate, SimulationParams, SimulationSummary};
use ensval_core::stats::{
    build_standard_report, compounding_row, policy_name, render_compounding, render_text,
    BaselineCounts, BaselineSource, IntervalEstimate, ReliabilityReport, ReportOptions,
};
use ensval_core::store::{self, load_questions, load_run, RunConfig, RunStore, RECORDS_FILE};
use ensval_core::{ConsensusPolicy, Ensemble, Outcome, ValidationRecord, Verdict};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATASET: u8 = 3;
const EXIT_STORAGE: u8 = 4;
const EXIT_BACKENDS: u8 = 5;
const EXIT_INTERRUPTED: u8 = 130;

#[derive(Parser)]
#[command(name = "ensval", version, about = "Consensus validation of multiple-choice content")]
struct Cli {
    /// Log verbosity for diagnostics on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Query every validator on every question and store the run.
    Validate(ValidateArgs),
    /// Rebuild the report of a stored run, optionally under another policy.
    Report(ReportArgs),
    /// Run an ensemble of synthetic validators.
    Simulate(SimulateArgs),
    /// Tabulate 1-(1-e)^k for a per-step error rate.
    Compound(CompoundArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// Question dataset (JSON Lines).
    #[arg(long)]
    questions: PathBuf,
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run directory to create or resume.
    #[arg(long)]
    out: PathBuf,
    /// Override the configured policy: "unanimous" or "k-of-n:K".
    #[arg(long)]
    policy: Option<String>,
    /// Skip questions already recorded in the run directory.
    #[arg(long)]
    resume: bool,
    /// Generator accuracy measured elsewhere, as correct/total.
    #[arg(long)]
    baseline: Option<BaselineCounts>,
    /// Print the report as JSON instead of tables.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory.
    #[arg(long)]
    run: PathBuf,
    /// Re-score stored votes under this policy: "unanimous" or "k-of-n:K".
    #[arg(long)]
    policy: Option<String>,
    /// Generator accuracy measured elsewhere, as correct/total. Defaults to
    /// the baseline supplied when the stored report was built.
    #[arg(long)]
    baseline: Option<BaselineCounts>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of validators.
    #[arg(long, default_value_t = 3)]
    validators: usize,
    /// Accuracy per validator, comma separated; one value applies to all.
    #[arg(long, value_delimiter = ',', default_value = "0.9")]
    accuracy: Vec<f64>,
    /// Difficulty coupling in [0, 1]; 0 means independent validators.
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    /// Options per question.
    #[arg(long, default_value_t = 8)]
    options: usize,
    /// Questions per trial.
    #[arg(long, default_value_t = 100_000)]
    items: u64,
    #[arg(long, default_value_t = 1)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "unanimous")]
    policy: String,
    /// Confidence level for the reported intervals.
    #[arg(long, default_value_t = 0.99)]
    confidence: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CompoundArgs {
    /// Per-step error rate in [0, 1].
    #[arg(long)]
    error: f64,
    /// Step counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    steps: Vec<u32>,
    #[arg(long)]
    json: bool,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(filter)),
        )
        .with_writer(std::io::stderr)
        .init();

    let result = match cli.command {
        Command::Validate(args) => run_async(validate(args)),
        Command::Report(args) => report(args),
        Command::Simulate(args) => simulate_cmd(args),
        Command::Compound(args) => compound(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run_async(fut: impl std::future::Future<Output = CmdResult>) -> CmdResult {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::new(1, e))?;
    rt.block_on(fut)
}

fn parse_policy(text: &str, base: ConsensusPolicy) -> Result<ConsensusPolicy, Failure> {
    let rule: ConsensusRule = text.parse().map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    Ok(ConsensusPolicy { rule, ..base })
}

fn print_json(value: &impl serde::Serialize) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("report types serialize")
    );
}

fn config_failure(e: ConfigError) -> Failure {
    Failure::new(EXIT_CONFIG, e)
}

fn load_config(path: &Path, policy: Option<&str>) -> Result<RunConfig, Failure> {
    let mut config = RunConfig::load(path).map_err(config_failure)?;
    if let Some(p) = policy {
        config.policy = parse_policy(p, config.policy)?;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    config
        .resolve_paths(base)
        .map_err(|e| Failure::new(EXIT_CONFIG, anyhow!("cannot resolve paths in {}: {e}", path.display())))?;
    config.check().map_err(config_failure)?;
    Ok(config)
}

fn report_for(
    records: &[ValidationRecord],
    config: &RunConfig,
    policy: ConsensusPolicy,
    baseline: Option<BaselineCounts>,
) -> ReliabilityReport {
    let options = ReportOptions {
        baseline,
        ..ReportOptions::default()
    };
    build_standard_report(records, &config.validator_names(), policy, &options)
}

fn all_votes_failed(records: &[ValidationRecord]) -> bool {
    let mut votes = records.iter().flat_map(|r| &r.votes).peekable();
    votes.peek().is_some() && votes.all(|v| matches!(v.verdict, Verdict::BackendError(_)))
}

fn run_summary(records: &[ValidationRecord]) -> String {
    let approved = records.iter().filter(|r| r.outcome.is_approved()).count();
    let mut reasons = std::collections::BTreeMap::new();
    for r in records {
        if let Outcome::Rejected(reason) = r.outcome {
            *reasons.entry(reason.to_string()).or_insert(0usize) += 1;
        }
    }
    let mut out = format!(
        "Run summary: {} questions, {} approved, {} rejected",
        records.len(),
        approved,
        records.len() - approved
    );
    if !reasons.is_empty() {
        let parts: Vec<String> = reasons.iter().map(|(k, v)| format!("{k} {v}")).collect();
        let _ = write!(out, " ({})", parts.join(", "));
    }
    out.push('\n');
    out
}

async fn validate(args: ValidateArgs) -> CmdResult {
    let config = load_config(&args.config, args.policy.as_deref())?;
    let questions = load_questions(&args.questions).map_err(|e| Failure::new(EXIT_DATASET, e))?;

    let tty = std::io::stderr().is_terminal();
    let progress: ensval_core::ProgressFn = Arc::new(move |done, total| {
        if tty {
            eprint!("\rvalidated {done}/{total}");
            if done == total {
                eprintln!();
            }
        } else if done == total || done % 100 == 0 {
            eprintln!("validated {done}/{total}");
        }
    });
    let ensemble = Ensemble::from_config(&config, Path::new("."))
        .map_err(config_failure)?
        .with_progress(progress);

    let store = RunStore::create(&args.out, &config).map_err(|e| Failure::new(EXIT_STORAGE, e))?;
    if !args.resume && !store.records().map_err(|e| Failure::new(EXIT_STORAGE, e))?.is_empty() {
        return Err(Failure::new(
            EXIT_STORAGE,
            anyhow!(
                "{} already holds records; pass --resume to continue it",
                args.out.join(RECORDS_FILE).display()
            ),
        ));
    }

    // Appends are synced as they happen, so on interrupt every finished
    // record is already on disk.
    let records = tokio::select! {
        r = ensemble.run_batch(&questions, Some(&store), args.resume) => r,
        _ = tokio::signal::ctrl_c() => {
            eprintln!("\ninterrupted; completed records are saved in {}", args.out.display());
            return Ok(EXIT_INTERRUPTED);
        }
    };
    let records = records.map_err(|e| match e {
        BatchError::Store(e) => Failure::new(EXIT_STORAGE, e),
        BatchError::Config(e) => Failure::new(EXIT_CONFIG, e),
        e @ BatchError::DuplicateQuestion(_) => Failure::new(EXIT_DATASET, e),
    })?;

    let report = report_for(&records, &config, config.policy, args.baseline);
    store::write_report(&args.out, &report).map_err(|e| Failure::new(EXIT_STORAGE, e))?;

    if args.json {
        print_json(&report);
    } else {
        print!("{}", run_summary(&records));
        println!();
        print!("{}", render_text(&report));
    }

    if all_votes_failed(&records) {
        return Err(Failure::new(
            EXIT_BACKENDS,
            anyhow!("every validator query failed; see the votes in {}", args.out.join(RECORDS_FILE).display()),
        ));
    }
    Ok(0)
}

fn report(args: ReportArgs) -> CmdResult {
    let (config, records) = load_run(&args.run).map_err(|e| Failure::new(EXIT_DATASET, e))?;
    let policy = match &args.policy {
        Some(p) => parse_policy(p, config.policy)?,
        None => config.policy,
    };
    policy
        .check_for(config.validators.len())
        .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let baseline = args.baseline.or_else(|| {
        store::read_report(&args.run)
            .ok()
            .filter(|r| r.baseline.source == BaselineSource::Supplied)
            .map(|r| BaselineCounts {
                correct: r.baseline.correct,
                total: r.baseline.scored,
            })
    });
    let report = report_for(&records, &config, policy, baseline);
    store::write_report(&args.run, &report).map_err(|e| Failure::new(EXIT_STORAGE, e))?;
    if args.json {
        print_json(&report);
    } else {
        print!("{}", render_text(&report));
    }
    Ok(0)
}

fn ci_text(ci: &IntervalEstimate) -> String {
    format!(
        "{:.5} [{:.5}, {:.5}]",
        ci.point, ci.lower, ci.upper
    )
}

fn render_simulation(s: &SimulationSummary) -> String {
    let mut out = String::new();
    let p = &s.params;
    let _ = writeln!(
        out,
        "Synthetic ensemble: {} validators, {} options, rho {}, {} items, policy {}",
        p.accuracies.len(),
        p.n_options,
        p.difficulty_weight,
        s.items,
        policy_name(&p.policy, p.accuracies.len())
    );
    let _ = writeln!(out, "{:.0}% Wilson intervals", p.confidence * 100.0);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "precision  {}",
        s.precision.as_ref().map(ci_text).unwrap_or_else(|| "undefined (no approvals)".into())
    );
    let _ = writeln!(out, "coverage   {}", ci_text(&s.coverage));
    let _ = writeln!(out, "approved   {} of {}", s.approved, s.items);
    let _ = writeln!(out, "mean kappa {:.4}", s.mean_kappa);
    for k in &s.pairwise_kappa {
        let _ = writeln!(
            out,
            "  v{} - v{}  kappa {:.4}  agreement {:.4}",
            k.a + 1,
            k.b + 1,
            k.kappa,
            k.observed_agreement
        );
    }
    let _ = writeln!(out, "mean correctness correlation {:.4}", s.mean_correctness_correlation);
    if let Some(a) = &s.analytic {
        let _ = writeln!(out);
        let _ = writeln!(out, "independent-validator prediction");
        let _ = writeln!(out, "precision  {:.5}", a.precision);
        let _ = writeln!(out, "coverage   {:.5}", a.coverage);
    }
    out
}

fn simulate_cmd(args: SimulateArgs) -> CmdResult {
    let accuracies = match args.accuracy.len() {
        1 => vec![args.accuracy[0]; args.validators],
        n if n == args.validators => args.accuracy.clone(),
        n => {
            return Err(Failure::new(
                EXIT_CONFIG,
                anyhow!("--accuracy has {n} values for {} validators", args.validators),
            ))
        }
    };
    let policy = parse_policy(&args.policy, ConsensusPolicy::unanimous())?;
    let params = SimulationParams {
        accuracies,
        difficulty_weight: args.rho,
        n_options: args.options,
        items: args.items,
        trials: args.trials,
        seed: args.seed,
        policy,
        confidence: args.confidence,
    };
    let summary = simulate(&params).map_err(|e| Failure::new(EXIT_CONFIG, anyhow!(e)))?;
    if args.json {
        print_json(&summary);
    } else {
        print!("{}", render_simulation(&summary));
    }
    Ok(0)
}

const COMPOUND_NOTE: &str = "Computed as 1-(1-e)^k from the unrounded step error; tables derived from a rounded or separately estimated step error can differ by a few tenths of a point.";

fn compound(args: CompoundArgs) -> CmdResult {
    if args.steps.is_empty() || args.steps.contains(&0) {
        return Err(Failure::new(EXIT_CONFIG, anyhow!("--steps must list positive step counts")));
    }
    let row = compounding_row("input", args.error, &args.steps).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    if args.json {
        print_json(&row);
    } else {
        let mut out = String::new();
        render_compounding(&mut out, std::slice::from_ref(&row));
        out.push_str(&format!("[1] {COMPOUND_NOTE}\n"));
        print!("{out}");
    }
    Ok(0)
}
