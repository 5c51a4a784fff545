//! The estimation methods: four estimators that blend labeled outcomes with
//! model predictions (postpi_boot, ppi, ppi_plusplus, pspa) and three
//! benchmarks (oracle, naive, classic), all returning the same fit shape.

pub mod engine;
pub mod postpi;

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::dataset::formula::Formula;
use crate::dataset::{Split, StackedDataset};
use crate::error::{IpdError, Result};
use crate::stat_core::linalg::Matrix;
use crate::stat_core::normal::normal_ci;
use crate::stat_core::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    PostpiBoot,
    Ppi,
    PpiPlusplus,
    Pspa,
    Oracle,
    Naive,
    Classic,
}

pub const METHOD_TAGS: [&str; 7] = [
    "postpi_boot",
    "ppi",
    "ppi_plusplus",
    "pspa",
    "oracle",
    "naive",
    "classic",
];

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::PostpiBoot => "postpi_boot",
            Method::Ppi => "ppi",
            Method::PpiPlusplus => "ppi_plusplus",
            Method::Pspa => "pspa",
            Method::Oracle => "oracle",
            Method::Naive => "naive",
            Method::Classic => "classic",
        }
    }

    pub fn is_benchmark(self) -> bool {
        matches!(self, Method::Oracle | Method::Naive | Method::Classic)
    }
}

impl FromStr for Method {
    type Err = IpdError;

    fn from_str(s: &str) -> Result<Method> {
        match s {
            "postpi_boot" => Ok(Method::PostpiBoot),
            "ppi" => Ok(Method::Ppi),
            "ppi_plusplus" => Ok(Method::PpiPlusplus),
            "pspa" => Ok(Method::Pspa),
            "oracle" => Ok(Method::Oracle),
            "naive" => Ok(Method::Naive),
            "classic" => Ok(Method::Classic),
            other => Err(IpdError::Config(format!(
                "unknown method {other:?}; valid methods: {}",
                METHOD_TAGS.join(", ")
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Estimand {
    Mean,
    Quantile,
    Ols,
    Logistic,
}

pub const ESTIMAND_TAGS: [&str; 4] = ["mean", "quantile", "ols", "logistic"];

impl Estimand {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimand::Mean => "mean",
            Estimand::Quantile => "quantile",
            Estimand::Ols => "ols",
            Estimand::Logistic => "logistic",
        }
    }

    pub fn is_regression(self) -> bool {
        matches!(self, Estimand::Ols | Estimand::Logistic)
    }
}

impl FromStr for Estimand {
    type Err = IpdError;

    fn from_str(s: &str) -> Result<Estimand> {
        match s {
            "mean" => Ok(Estimand::Mean),
            "quantile" => Ok(Estimand::Quantile),
            "ols" => Ok(Estimand::Ols),
            "logistic" => Ok(Estimand::Logistic),
            other => Err(IpdError::Config(format!(
                "unknown estimand {other:?}; valid estimands: {}",
                ESTIMAND_TAGS.join(", ")
            ))),
        }
    }
}

/// Everything a fit needs beyond the data: method, estimand, and options.
#[derive(Clone, Debug)]
pub struct MethodConfig {
    pub method: Method,
    pub estimand: Estimand,
    /// Two-sided miscoverage level of the confidence intervals.
    pub alpha: f64,
    /// Quantile level; present exactly when estimand is "quantile".
    pub q: Option<f64>,
    /// Bootstrap replicates (postpi_boot only).
    pub nboot: usize,
    pub seed: u64,
    /// Clip the ppi_plusplus tuning weight to [0, 1].
    pub lambda_clip: bool,
    /// Pin the ppi_plusplus weight instead of estimating it.
    pub lambda_override: Option<f64>,
    /// Pin the pspa weights instead of estimating them.
    pub omega_override: Option<Vec<f64>>,
}

impl MethodConfig {
    pub fn new(method: Method, estimand: Estimand, seed: u64) -> Self {
        MethodConfig {
            method,
            estimand,
            alpha: 0.05,
            q: None,
            nboot: 200,
            seed,
            lambda_clip: true,
            lambda_override: None,
            omega_override: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(IpdError::Config(format!(
                "alpha must lie strictly between 0 and 1, got {}",
                self.alpha
            )));
        }
        match (self.estimand, self.q) {
            (Estimand::Quantile, None) => {
                return Err(IpdError::Config(
                    "estimand \"quantile\" requires a quantile level q".into(),
                ))
            }
            (Estimand::Quantile, Some(q)) if !(q > 0.0 && q < 1.0) => {
                return Err(IpdError::Config(format!(
                    "quantile level must lie strictly between 0 and 1, got {q}"
                )))
            }
            (Estimand::Quantile, Some(_)) => {}
            (_, Some(q)) => {
                return Err(IpdError::Config(format!(
                    "quantile level q = {q} given, but estimand is {:?}",
                    self.estimand.as_str()
                )))
            }
            (_, None) => {}
        }
        if self.method == Method::PostpiBoot {
            if !self.estimand.is_regression() {
                return Err(IpdError::Unsupported(format!(
                    "method \"postpi_boot\" supports estimands \"ols\" and \"logistic\" only, \
                     not {:?}",
                    self.estimand.as_str()
                )));
            }
            if self.nboot < 2 {
                return Err(IpdError::Config(format!(
                    "postpi_boot needs nboot >= 2, got {}",
                    self.nboot
                )));
            }
        }
        if self.lambda_override.is_some() && self.method != Method::PpiPlusplus {
            return Err(IpdError::Config(
                "lambda_override applies to method \"ppi_plusplus\" only".into(),
            ));
        }
        if self.omega_override.is_some() && self.method != Method::Pspa {
            return Err(IpdError::Config(
                "omega_override applies to method \"pspa\" only".into(),
            ));
        }
        Ok(())
    }
}

/// A fitted method: estimates with standard errors and confidence limits,
/// plus method-specific intermediate quantities.
#[derive(Clone, Debug)]
pub struct IpdFit<F> {
    pub method: Method,
    pub estimand: Estimand,
    pub terms: Vec<String>,
    pub estimates: Vec<F>,
    pub std_errors: Vec<F>,
    pub ci_lower: Vec<F>,
    pub ci_upper: Vec<F>,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub alpha: f64,
    /// Named diagnostics: tuning weights, relationship-model coefficients,
    /// effective bootstrap counts, degeneracy flags.
    pub intermediates: BTreeMap<String, Vec<F>>,
}

/// Coefficient names for an estimand: regression terms follow the formula,
/// scalar estimands use a fixed name.
pub fn term_names(estimand: Estimand, formula: &Formula, q: Option<f64>) -> Vec<String> {
    match estimand {
        Estimand::Mean => vec!["mean".to_string()],
        Estimand::Quantile => vec![format!("quantile_{:.2}", q.unwrap_or(0.5))],
        Estimand::Ols | Estimand::Logistic => {
            let mut t = vec!["(Intercept)".to_string()];
            t.extend(formula.covariates.iter().cloned());
            t
        }
    }
}

/// Assemble an IpdFit from a point estimate and its covariance matrix,
/// enforcing the output invariants (positive SEs, CI containing the
/// estimate).
pub(crate) fn finalize_fit<F: Real>(
    method: Method,
    estimand: Estimand,
    terms: Vec<String>,
    estimates: Vec<F>,
    covariance: &Matrix<F>,
    n_labeled: usize,
    n_unlabeled: usize,
    alpha: f64,
    intermediates: BTreeMap<String, Vec<F>>,
) -> Result<IpdFit<F>> {
    let p = estimates.len();
    assert_eq!(terms.len(), p, "term/estimate length mismatch");
    assert_eq!(covariance.rows(), p, "covariance dimension mismatch");
    let mut std_errors = Vec::with_capacity(p);
    let mut ci_lower = Vec::with_capacity(p);
    let mut ci_upper = Vec::with_capacity(p);
    for j in 0..p {
        let v = covariance[(j, j)];
        if !(v > F::zero()) || !v.is_finite() {
            return Err(IpdError::DegeneratePredictions(format!(
                "variance of term {:?} is not positive ({v})",
                terms[j]
            )));
        }
        let se = v.sqrt();
        let (lo, hi) = normal_ci(estimates[j], se, alpha);
        std_errors.push(se);
        ci_lower.push(lo);
        ci_upper.push(hi);
    }
    Ok(IpdFit {
        method,
        estimand,
        terms,
        estimates,
        std_errors,
        ci_lower,
        ci_upper,
        n_labeled,
        n_unlabeled,
        alpha,
        intermediates,
    })
}

/// Fit the configured method on a validated stacked dataset.
///
/// This is the single entry point: it checks formula/config consistency,
/// splits the data, and dispatches to the per-method routine.
pub fn fit_ipd<F: Real>(
    formula: &Formula,
    data: &StackedDataset,
    config: &MethodConfig,
) -> Result<IpdFit<F>> {
    config.validate()?;
    if config.estimand.is_regression() && formula.covariates.is_empty() {
        return Err(IpdError::Config(format!(
            "estimand {:?} needs at least one covariate in the formula",
            config.estimand.as_str()
        )));
    }
    if !config.estimand.is_regression() && !formula.covariates.is_empty() {
        return Err(IpdError::Config(format!(
            "estimand {:?} takes no covariates, but the formula lists {:?}",
            config.estimand.as_str(),
            formula.covariates
        )));
    }
    let split = data.split()?;
    match config.method {
        Method::Oracle | Method::Naive | Method::Classic => {
            fit_benchmark(config.method, formula, data, &split, config)
        }
        Method::PostpiBoot => postpi::fit_postpi_boot(formula, data, &split, config),
        Method::Ppi => fit_ppi(formula, data, &split, config),
        Method::PpiPlusplus => fit_ppi_plusplus(formula, data, &split, config),
        Method::Pspa => fit_pspa(formula, data, &split, config),
    }
}

/// Oracle, naive, and classic reference fits.
///
/// All three are weight-zero cases of the shared estimating-equation engine,
/// so their estimates and standard errors agree bit-for-bit with the tuned
/// methods when the tuning weights collapse to zero.
pub fn fit_benchmark<F: Real>(
    kind: Method,
    formula: &Formula,
    data: &StackedDataset,
    split: &Split,
    config: &MethodConfig,
) -> Result<IpdFit<F>> {
    assert!(kind.is_benchmark(), "not a benchmark method: {kind:?}");
    let eng = match kind {
        Method::Classic => engine::Engine::from_dataset(formula, data, split, config)?,
        Method::Naive => engine::Engine::unlabeled_only(formula, data, split, config, false)?,
        Method::Oracle => engine::Engine::unlabeled_only(formula, data, split, config, true)?,
        _ => unreachable!(),
    };
    let w = vec![F::zero(); eng.dim()];
    let fit = eng.fit(&w)?;
    finalize_fit(
        kind,
        config.estimand,
        term_names(config.estimand, formula, config.q),
        fit.theta,
        &fit.covariance,
        split.n_labeled(),
        split.n_unlabeled(),
        config.alpha,
        BTreeMap::new(),
    )
}

/// Prediction-powered inference: full-weight rectified estimating equation.
pub fn fit_ppi<F: Real>(
    formula: &Formula,
    data: &StackedDataset,
    split: &Split,
    config: &MethodConfig,
) -> Result<IpdFit<F>> {
    let eng = engine::Engine::from_dataset(formula, data, split, config)?;
    let w = vec![F::one(); eng.dim()];
    let fit = eng.fit(&w)?;
    finalize_fit(
        Method::Ppi,
        config.estimand,
        term_names(config.estimand, formula, config.q),
        fit.theta,
        &fit.covariance,
        split.n_labeled(),
        split.n_unlabeled(),
        config.alpha,
        BTreeMap::new(),
    )
}

/// PPI with a scalar power-tuning weight λ chosen to minimize the estimated
/// asymptotic variance, then clipped to [0, 1] unless disabled.
pub fn fit_ppi_plusplus<F: Real>(
    formula: &Formula,
    data: &StackedDataset,
    split: &Split,
    config: &MethodConfig,
) -> Result<IpdFit<F>> {
    let eng: engine::Engine<F> = engine::Engine::from_dataset(formula, data, split, config)?;
    let mut intermediates = BTreeMap::new();
    let lambda = match config.lambda_override {
        Some(l) => F::from_f64_lossy(l),
        None => {
            let tuned = eng.tune_lambda()?;
            if tuned.degenerate {
                intermediates.insert("lambda_degenerate".to_string(), vec![F::one()]);
            }
            if config.lambda_clip {
                tuned.value.max(F::zero()).min(F::one())
            } else {
                tuned.value
            }
        }
    };
    intermediates.insert("lambda_hat".to_string(), vec![lambda]);
    let w = vec![lambda; eng.dim()];
    let fit = eng.fit(&w)?;
    finalize_fit(
        Method::PpiPlusplus,
        config.estimand,
        term_names(config.estimand, formula, config.q),
        fit.theta,
        &fit.covariance,
        split.n_labeled(),
        split.n_unlabeled(),
        config.alpha,
        intermediates,
    )
}

/// Post-prediction adaptive inference: one variance-minimizing weight per
/// coefficient, always clipped to [0, 1].
pub fn fit_pspa<F: Real>(
    formula: &Formula,
    data: &StackedDataset,
    split: &Split,
    config: &MethodConfig,
) -> Result<IpdFit<F>> {
    let eng = engine::Engine::from_dataset(formula, data, split, config)?;
    let mut intermediates = BTreeMap::new();
    let omega: Vec<F> = match &config.omega_override {
        Some(values) => {
            if values.len() != eng.dim() {
                return Err(IpdError::Config(format!(
                    "omega_override has {} entries for {} coefficients",
                    values.len(),
                    eng.dim()
                )));
            }
            values.iter().map(|&v| F::from_f64_lossy(v)).collect()
        }
        None => {
            let tuned = eng.tune_omega()?;
            if tuned.degenerate_count > 0 {
                intermediates.insert(
                    "omega_degenerate".to_string(),
                    vec![F::from_usize(tuned.degenerate_count).unwrap()],
                );
            }
            tuned.values
        }
    };
    intermediates.insert("omega_hat".to_string(), omega.clone());
    let fit = eng.fit(&omega)?;
    finalize_fit(
        Method::Pspa,
        config.estimand,
        term_names(config.estimand, formula, config.q),
        fit.theta,
        &fit.covariance,
        split.n_labeled(),
        split.n_unlabeled(),
        config.alpha,
        intermediates,
    )
}
