//! Command-line front end: `simulate`, `fit`, and `benchmark`.
//!
//! Every subcommand takes an explicit `--seed`; nothing reads the clock, so
//! a repeated invocation reproduces its output byte for byte. Failures print
//! a structured JSON object on standard error and map to stable exit codes
//! (2 usage, 3 data, 4 numerical).

pub mod study;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};

use crate::dataset::formula::parse_formula;
use crate::dataset::load_stacked;
use crate::error::Result;
use crate::methods::{fit_ipd, Estimand, Method, MethodConfig};
use crate::report::{glance, tidy};
use crate::simdat::{simdat, SimConfig};

use self::study::{run_study, write_long_csv, write_study_csv, StudyConfig};

#[derive(Parser, Debug)]
#[command(
    name = "ipd",
    version,
    about = "Estimators, simulator, and coverage benchmark for inference on predicted data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic stacked dataset and write it as CSV
    Simulate(SimulateArgs),
    /// Fit one method to a stacked dataset and print tidy/glance JSON
    Fit(FitArgs),
    /// Run the Monte Carlo coverage benchmark and write report CSVs
    Benchmark(BenchmarkArgs),
}

fn parse_counts(text: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(format!(
            "expected three comma-separated counts (training,labeled,unlabeled), got {text:?}"
        ));
    }
    let mut counts = [0usize; 3];
    for (slot, part) in counts.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("{part:?} is not a row count"))?;
    }
    Ok((counts[0], counts[1], counts[2]))
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Row counts: training,labeled,unlabeled
    #[arg(long, default_value = "100,100,1000", value_parser = parse_counts)]
    n: (usize, usize, usize),
    /// True coefficient on X1
    #[arg(long, default_value_t = 1.0)]
    effect: f64,
    /// Outcome noise standard deviation
    #[arg(long, default_value_t = 4.0)]
    sigma_y: f64,
    /// Intended estimand: ols, mean, quantile (continuous outcome) or
    /// logistic (binary outcome)
    #[arg(long, default_value = "ols")]
    model: Estimand,
    /// RNG seed; required so every run is reproducible
    #[arg(long)]
    seed: u64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Model formula, e.g. "Y - f ~ X1 + X2"
    #[arg(long)]
    formula: String,
    /// Estimation method: postpi_boot, ppi, ppi_plusplus, pspa, oracle,
    /// naive, classic
    #[arg(long)]
    method: Method,
    /// Estimand family: mean, quantile, ols, logistic
    #[arg(long)]
    model: Estimand,
    /// Input stacked CSV
    #[arg(long)]
    data: PathBuf,
    /// Column marking each row as training, labeled, or unlabeled
    #[arg(long, default_value = "set")]
    label: String,
    /// Two-sided miscoverage level of the confidence intervals
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Quantile level; required with --model quantile
    #[arg(long)]
    q: Option<f64>,
    /// Bootstrap replicates (postpi_boot only)
    #[arg(long, default_value_t = 200)]
    nboot: usize,
    /// RNG seed; required so every run is reproducible
    #[arg(long)]
    seed: u64,
    /// Clip the ppi_plusplus tuning weight to [0, 1]
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    lambda_clip: bool,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Monte Carlo replicates
    #[arg(long, default_value_t = 500)]
    replicates: usize,
    /// Row counts per simulated dataset: training,labeled,unlabeled
    #[arg(long, default_value = "100,100,1000", value_parser = parse_counts)]
    n: (usize, usize, usize),
    /// True coefficient on X1 (the coverage target)
    #[arg(long, default_value_t = 1.0)]
    effect: f64,
    /// Outcome noise standard deviation
    #[arg(long, default_value_t = 4.0)]
    sigma_y: f64,
    /// Two-sided miscoverage level
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bootstrap replicates for postpi_boot
    #[arg(long, default_value_t = 200)]
    nboot: usize,
    /// RNG seed; required so every run is reproducible
    #[arg(long)]
    seed: u64,
    /// Worker threads; the output does not depend on this
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Aggregate report CSV path
    #[arg(long)]
    out: PathBuf,
    /// Per-replicate long CSV path (default: report path with a _long suffix)
    #[arg(long)]
    long_out: Option<PathBuf>,
}

/// Parse real process arguments and run; returns the process exit code.
pub fn run() -> i32 {
    run_with(std::env::args_os())
}

/// Testable entry point: parse `args` (including argv[0]) and run.
pub fn run_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version go to stdout with exit 0; bad flags to stderr, exit 2
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let payload = serde_json::json!({
                "error": { "kind": e.kind(), "message": e.to_string() }
            });
            eprintln!("{payload}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Benchmark(args) => cmd_benchmark(args),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let (n_training, n_labeled, n_unlabeled) = args.n;
    let config = SimConfig {
        n_training,
        n_labeled,
        n_unlabeled,
        effect: args.effect,
        sigma_y: args.sigma_y,
        model: args.model,
        seed: args.seed,
    };
    let data = simdat(&config)?;
    data.to_csv(BufWriter::new(File::create(&args.out)?))?;
    println!(
        "wrote {} rows ({n_training} training, {n_labeled} labeled, {n_unlabeled} unlabeled) to {}",
        n_training + n_labeled + n_unlabeled,
        args.out.display()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let formula = parse_formula(&args.formula)?;
    let data = load_stacked(BufReader::new(File::open(&args.data)?), &args.label, &formula)?;
    let mut config = MethodConfig::new(args.method, args.model, args.seed);
    config.alpha = args.alpha;
    config.q = args.q;
    config.nboot = args.nboot;
    config.lambda_clip = args.lambda_clip;
    let fit = fit_ipd::<f64>(&formula, &data, &config)?;
    let payload = serde_json::json!({
        "glance": glance(&fit),
        "tidy": tidy(&fit),
    });
    let text = serde_json::to_string_pretty(&payload)
        .expect("fit reports contain only plain JSON-ready fields");
    println!("{text}");
    Ok(())
}

fn default_long_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".to_string());
    out.with_file_name(format!("{stem}_long.csv"))
}

fn cmd_benchmark(args: BenchmarkArgs) -> Result<()> {
    let (n_training, n_labeled, n_unlabeled) = args.n;
    let mut config = StudyConfig::new(args.seed);
    config.replicates = args.replicates;
    config.jobs = args.jobs;
    config.alpha = args.alpha;
    config.nboot = args.nboot;
    config.sim.n_training = n_training;
    config.sim.n_labeled = n_labeled;
    config.sim.n_unlabeled = n_unlabeled;
    config.sim.effect = args.effect;
    config.sim.sigma_y = args.sigma_y;
    let result = run_study(&config)?;
    write_study_csv(&result.rows, BufWriter::new(File::create(&args.out)?))?;
    let long_path = args.long_out.unwrap_or_else(|| default_long_path(&args.out));
    write_long_csv(&result.long, BufWriter::new(File::create(&long_path)?))?;
    println!(
        "{:<13} {:>10} {:>10} {:>12} {:>10}",
        "method", "coverage", "mc_se", "mean_width", "bias"
    );
    for row in &result.rows {
        println!(
            "{:<13} {:>10.3} {:>10.3} {:>12.4} {:>10.4}",
            row.method, row.coverage, row.mc_se, row.mean_width, row.bias
        );
    }
    println!(
        "report written to {}, per-replicate rows to {}",
        args.out.display(),
        long_path.display()
    );
    Ok(())
}
