//! Command line for building and studying private histogram summaries.
//!
//! Exit codes: 0 success, 2 bad input or precondition, 3 privacy budget
//! already spent, 4 equivalence check failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dp_summary::backend::{Backend, GateCostModel};
use dp_summary::config::{encode_hex, DataFile, LedgerFile, RunReport};
use dp_summary::error::Error;
use dp_summary::experiment::{
    accuracy_study, accuracy_summary_csv, bench_csv, bench_gates, default_formats, gen_histogram,
    verify_equivalence,
};
use dp_summary::fixed::FixedFormat;
use dp_summary::noise::{BudgetLedger, NoiseStream, Phase, PrivacyBudget};
use dp_summary::protocol::{run_pipeline, serve_query, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "dp-summary",
    about = "Differentially private histogram summaries over an abstract homomorphic-gate backend",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic histogram.
    GenData(GenDataArgs),
    /// Build a summary through the full protocol and answer a sample query.
    Run(RunArgs),
    /// Count gates per pipeline phase across domain sizes and formats.
    BenchGates(BenchArgs),
    /// Measure summary error across fixed-point formats and float64.
    Accuracy(AccuracyArgs),
    /// Check the encrypted pipeline against the plaintext oracle, bit for bit.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of histogram domains.
    #[arg(long)]
    n: usize,
    /// Generation seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output JSON path; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Histogram JSON file; mutually exclusive with --n.
    #[arg(long, conflicts_with = "n")]
    data: Option<PathBuf>,
    /// Generate the input histogram with this many domains instead.
    #[arg(long)]
    n: Option<usize>,
    /// Fixed-point format as T:F.
    #[arg(long, default_value = "16:8")]
    format: String,
    /// Total privacy budget.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Budget split between partitioning and noising, as a:b.
    #[arg(long, default_value = "1:3")]
    split: String,
    /// Seed for data generation (with --n) and noise.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Persistent budget ledger path; enforces one construction per
    /// dataset-budget pair across invocations.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Report output JSON path; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Domain sizes: a single value or an inclusive range like 2..8.
    #[arg(long, default_value = "2..8")]
    n: String,
    /// Fixed-point formats as T:F; repeatable. Defaults to 10:2 12:4 16:8.
    #[arg(long = "format")]
    formats: Vec<String>,
    /// Assumed seconds per homomorphic gate.
    #[arg(long, default_value_t = 0.01)]
    seconds_per_gate: f64,
    /// CSV output path; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional JSON sidecar with the same rows.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct AccuracyArgs {
    /// Domain sizes: a single value or an inclusive range like 2..10.
    #[arg(long, default_value = "2..10")]
    n: String,
    /// Fixed-point formats as T:F; repeatable. Defaults to 10:2 12:4 16:8.
    #[arg(long = "format")]
    formats: Vec<String>,
    /// Total privacy budget.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Budget split between partitioning and noising, as a:b.
    #[arg(long, default_value = "1:3")]
    split: String,
    /// Noise trials per domain size (at least 2).
    #[arg(long, default_value_t = 100)]
    trials: u64,
    /// Base seed; each domain size derives its dataset and noise seeds from it.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV output path; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Domain sizes: a single value or an inclusive range like 2..8.
    #[arg(long, default_value = "2..8")]
    n: String,
    /// Fixed-point formats as T:F; repeatable. Defaults to 10:2 12:4 16:8.
    #[arg(long = "format")]
    formats: Vec<String>,
    /// Seeded histograms per (n, format) cell.
    #[arg(long, default_value_t = 50)]
    trials: u64,
    /// Base seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::BudgetExhausted => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Run(args) => cmd_run(args),
        Command::BenchGates(args) => cmd_bench(args),
        Command::Accuracy(args) => cmd_accuracy(args),
        Command::Verify(args) => cmd_verify(args),
    }
}

/// Parses "7" or "2..8" (inclusive on both ends) into domain sizes.
fn parse_n_spec(spec: &str) -> Result<Vec<usize>, Error> {
    let parse_one = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidInput(format!("'{s}' is not a domain count")))
    };
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo = parse_one(lo)?;
        let hi = parse_one(hi)?;
        if lo == 0 || hi < lo {
            return Err(Error::InvalidInput(format!("'{spec}' is not a valid domain range")));
        }
        Ok((lo..=hi).collect())
    } else {
        let n = parse_one(spec)?;
        if n == 0 {
            return Err(Error::InvalidInput("domain count must be positive".into()));
        }
        Ok(vec![n])
    }
}

fn parse_formats(specs: &[String]) -> Result<Vec<FixedFormat>, Error> {
    if specs.is_empty() {
        return Ok(default_formats());
    }
    specs.iter().map(|s| FixedFormat::parse(s)).collect()
}

fn parse_split(spec: &str) -> Result<(u32, u32), Error> {
    let bad = || Error::InvalidInput(format!("'{spec}' is not a split ratio like 1:3"));
    let (a, b) = spec.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn emit(out: Option<&PathBuf>, content: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<ExitCode, Error> {
    let hist = gen_histogram(args.n, args.seed)?;
    let text = serde_json::to_string_pretty(&DataFile { counts: hist.counts().to_vec() })?;
    emit(args.out.as_ref(), &format!("{text}\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, Error> {
    let hist = match (&args.data, args.n) {
        (Some(path), _) => DataFile::load(path)?,
        (None, Some(n)) => gen_histogram(n, args.seed)?,
        (None, None) => {
            return Err(Error::InvalidInput("provide a histogram with --data or --n".into()))
        }
    };
    let format = FixedFormat::parse(&args.format)?;
    let (a, b) = parse_split(&args.split)?;
    let budget = PrivacyBudget::split(args.epsilon, a, b)?;

    let mut ledger = match &args.ledger {
        Some(path) => LedgerFile::load(path)?,
        None => BudgetLedger::new(),
    };

    let cfg = PipelineConfig::new(hist, format, budget, NoiseStream::seeded(args.seed));
    let be = Backend::counting();
    let mut run = run_pipeline(&cfg, &be, &mut ledger)?;
    if let Some(path) = &args.ledger {
        LedgerFile::save(path, &ledger)?;
    }

    // Demonstrate the query path on the full range.
    let n = run.summary.n();
    serve_query(&run.summary, &mut run.transcript, 1, n)?;

    let model = GateCostModel::default();
    let report = RunReport {
        cut_mask: run.cut_mask,
        s_prime_raw: run.s_prime_raw.clone(),
        phase_stats: run.phase_stats,
        gate_total: run.phase_stats.grand_total(),
        est_seconds: be.stats().cost_estimate(&model),
        cost_table_draws: run.noise_log.count_for(Phase::CostTable),
        bucket_sum_draws: run.noise_log.count_for(Phase::BucketSums),
        dataset_digest: encode_hex(&run.dataset_digest),
        transcript: run.transcript.export_lines().lines().map(str::to_owned).collect(),
        summary: run.summary,
    };
    let text = serde_json::to_string_pretty(&report)?;
    emit(args.out.as_ref(), &format!("{text}\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode, Error> {
    let ns = parse_n_spec(&args.n)?;
    let formats = parse_formats(&args.formats)?;
    if !(args.seconds_per_gate.is_finite() && args.seconds_per_gate > 0.0) {
        return Err(Error::InvalidInput("seconds per gate must be positive".into()));
    }
    let model = GateCostModel { seconds_per_gate: args.seconds_per_gate };
    let rows = bench_gates(&ns, &formats, &model)?;
    emit(args.out.as_ref(), &bench_csv(&rows))?;
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_string_pretty(&rows)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_accuracy(args: AccuracyArgs) -> Result<ExitCode, Error> {
    let ns = parse_n_spec(&args.n)?;
    let formats = parse_formats(&args.formats)?;
    let (a, b) = parse_split(&args.split)?;
    let budget = PrivacyBudget::split(args.epsilon, a, b)?;
    let rows = accuracy_study(&ns, &formats, args.trials, args.seed, budget)?;
    emit(args.out.as_ref(), &accuracy_summary_csv(&rows)?)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, Error> {
    let ns = parse_n_spec(&args.n)?;
    let formats = parse_formats(&args.formats)?;
    if args.trials == 0 {
        return Err(Error::InvalidInput("trials must be positive".into()));
    }
    let report = verify_equivalence(&ns, &formats, args.trials, args.seed)?;
    if report.ok() {
        println!("equivalence ok: {} cells, zero mismatches", report.cells);
        Ok(ExitCode::SUCCESS)
    } else {
        println!(
            "equivalence FAILED: {} of {} cells mismatch",
            report.mismatches.len(),
            report.cells
        );
        for m in &report.mismatches {
            println!(
                "  n={} format={} trial={} {}: encrypted {} vs oracle {}",
                m.n, m.format, m.trial, m.field, m.encrypted, m.oracle
            );
        }
        Ok(ExitCode::from(4))
    }
}
