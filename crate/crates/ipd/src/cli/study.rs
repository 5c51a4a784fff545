//! Monte Carlo benchmark: simulate R datasets, fit every method on each,
//! and aggregate coverage, width, and bias for the true X1 coefficient.
//!
//! Replicates run in parallel, but each replicate's randomness is keyed by
//! its index alone and the aggregation is a sequential fold in index order,
//! so the outputs are byte-identical for any worker count.

use std::io::Write;

use rayon::prelude::*;

use crate::dataset::formula::{parse_formula, Formula};
use crate::error::{IpdError, Result};
use crate::methods::{fit_ipd, Estimand, Method, MethodConfig};
use crate::simdat::{simdat, SimConfig};
use crate::stat_core::rng::{derive_seed, domains, stream_id};

/// Benchmark method set, in report order.
pub const STUDY_METHODS: [Method; 7] = [
    Method::Oracle,
    Method::Naive,
    Method::Classic,
    Method::PostpiBoot,
    Method::Ppi,
    Method::PpiPlusplus,
    Method::Pspa,
];

/// The coefficient the study tracks.
const TARGET_TERM: &str = "X1";
/// Abort when a method fails more than this fraction of replicates.
const MAX_METHOD_FAILURE: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub replicates: usize,
    /// Worker threads; results do not depend on this.
    pub jobs: usize,
    /// Data-generating design. Its `seed` and `model` fields are ignored:
    /// per-replicate seeds are derived from `seed` below, and the benchmark
    /// is a linear-regression study.
    pub sim: SimConfig,
    pub alpha: f64,
    pub nboot: usize,
    pub seed: u64,
}

impl StudyConfig {
    pub fn new(seed: u64) -> Self {
        StudyConfig {
            replicates: 500,
            jobs: 1,
            sim: SimConfig::new(0),
            alpha: 0.05,
            nboot: 200,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(IpdError::Config(format!(
                "a study needs at least 2 replicates, got {}",
                self.replicates
            )));
        }
        if self.jobs < 1 {
            return Err(IpdError::Config("jobs must be at least 1".into()));
        }
        self.sim.validate()
    }
}

/// Aggregate row for one method.
#[derive(Clone, Debug)]
pub struct StudyRow {
    pub method: String,
    /// Successful replicates entering the aggregates.
    pub replicates: usize,
    pub coverage: f64,
    pub mean_width: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    /// Monte Carlo standard error of the coverage proportion.
    pub mc_se: f64,
}

/// One successful fit in the per-replicate long format.
#[derive(Clone, Debug)]
pub struct LongRow {
    pub replicate: usize,
    pub method: String,
    pub term: String,
    pub estimate: f64,
    pub conf_low: f64,
    pub conf_high: f64,
    pub covered: bool,
    pub width: f64,
}

pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub long: Vec<LongRow>,
}

/// Estimate and confidence limits for the target term, one slot per method
/// (None marks a numerical failure for that method on this replicate).
type ReplicateOutcome = Vec<Option<(f64, f64, f64)>>;

fn run_replicate(config: &StudyConfig, formula: &Formula, r: usize) -> Result<ReplicateOutcome> {
    let data_seed = derive_seed(config.seed, stream_id(domains::STUDY, 2 * r as u32));
    let boot_seed = derive_seed(config.seed, stream_id(domains::STUDY, 2 * r as u32 + 1));
    let mut sim = config.sim.clone();
    sim.seed = data_seed;
    sim.model = Estimand::Ols;
    let data = simdat(&sim)?;
    let mut outcome = Vec::with_capacity(STUDY_METHODS.len());
    for method in STUDY_METHODS {
        let mut mc = MethodConfig::new(method, Estimand::Ols, boot_seed);
        mc.alpha = config.alpha;
        mc.nboot = config.nboot;
        match fit_ipd::<f64>(formula, &data, &mc) {
            Ok(fit) => {
                let j = fit
                    .terms
                    .iter()
                    .position(|t| t == TARGET_TERM)
                    .expect("study formula always carries the target term");
                outcome.push(Some((fit.estimates[j], fit.ci_lower[j], fit.ci_upper[j])));
            }
            // numerical failures are per-replicate events; anything else
            // (config, schema, data) would fail every replicate, so abort
            Err(e) if e.exit_code() == 4 => outcome.push(None),
            Err(e) => return Err(e),
        }
    }
    Ok(outcome)
}

pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let formula = parse_formula(&format!("Y - f ~ {TARGET_TERM}"))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| IpdError::Config(format!("could not start {} workers: {e}", config.jobs)))?;
    let per_replicate: Vec<ReplicateOutcome> = pool.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .map(|r| run_replicate(config, &formula, r))
            .collect::<Result<Vec<_>>>()
    })?;

    let truth = config.sim.effect;
    let mut long = Vec::new();
    for (r, outcome) in per_replicate.iter().enumerate() {
        for (method, slot) in STUDY_METHODS.iter().zip(outcome) {
            if let Some((estimate, lo, hi)) = slot {
                long.push(LongRow {
                    replicate: r + 1,
                    method: method.as_str().to_string(),
                    term: TARGET_TERM.to_string(),
                    estimate: *estimate,
                    conf_low: *lo,
                    conf_high: *hi,
                    covered: *lo <= truth && truth <= *hi,
                    width: *hi - *lo,
                });
            }
        }
    }

    let mut rows = Vec::with_capacity(STUDY_METHODS.len());
    for (m, method) in STUDY_METHODS.iter().enumerate() {
        let successes: Vec<(f64, f64, f64)> = per_replicate
            .iter()
            .filter_map(|outcome| outcome[m])
            .collect();
        let failed = config.replicates - successes.len();
        if failed as f64 > MAX_METHOD_FAILURE * config.replicates as f64 {
            return Err(IpdError::FailureRate(format!(
                "method {} failed {failed} of {} replicates",
                method.as_str(),
                config.replicates
            )));
        }
        let k = successes.len() as f64;
        let covered = successes
            .iter()
            .filter(|(_, lo, hi)| *lo <= truth && truth <= *hi)
            .count() as f64;
        let coverage = covered / k;
        let mean_width = successes.iter().map(|(_, lo, hi)| hi - lo).sum::<f64>() / k;
        let mean_estimate = successes.iter().map(|(e, _, _)| e).sum::<f64>() / k;
        rows.push(StudyRow {
            method: method.as_str().to_string(),
            replicates: successes.len(),
            coverage,
            mean_width,
            mean_estimate,
            bias: mean_estimate - truth,
            mc_se: (coverage * (1.0 - coverage) / k).sqrt(),
        });
    }
    Ok(StudyResult { rows, long })
}

/// Aggregate report CSV; floats at full precision so reruns can be compared
/// byte-for-byte.
pub fn write_study_csv<W: Write>(rows: &[StudyRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "method,replicates,coverage,mean_width,mean_estimate,bias,mc_se"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.method, r.replicates, r.coverage, r.mean_width, r.mean_estimate, r.bias, r.mc_se
        )?;
    }
    Ok(())
}

/// Per-replicate long-format CSV for external plotting.
pub fn write_long_csv<W: Write>(rows: &[LongRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "replicate,method,term,estimate,conf_low,conf_high,covered,width"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.16e},{:.16e},{:.16e},{},{:.16e}",
            r.replicate,
            r.method,
            r.term,
            r.estimate,
            r.conf_low,
            r.conf_high,
            u8::from(r.covered),
            r.width
        )?;
    }
    Ok(())
}
