//! Bootstrap correction through a relationship model.
//!
//! The labeled rows teach a regression of the observed outcome on the
//! prediction (plus covariates); each bootstrap replicate then resamples the
//! unlabeled rows, simulates outcomes from the refitted relationship model,
//! and refits the downstream estimand. The replicate spread yields the
//! standard error, the coordinate-wise median the point estimate.

use std::collections::BTreeMap;

use crate::dataset::formula::Formula;
use crate::dataset::{Outcome, Split, StackedDataset};
use crate::error::{IpdError, Result};
use crate::methods::engine::{convert_matrix, convert_vec};
use crate::methods::{finalize_fit, term_names, Estimand, IpdFit, Method, MethodConfig};
use crate::stat_core::glm::{expit, logistic_solve, ols_solve};
use crate::stat_core::linalg::Matrix;
use crate::stat_core::rng::{domains, resample_indices, stream_id, RngStream};
use crate::stat_core::{variance, Real};

/// Fraction of failed bootstrap replicates above which the fit is abandoned.
const MAX_FAILURE_FRACTION: f64 = 0.10;

/// Convergence settings for the per-replicate logistic refits.
const REL_LOGISTIC_TOL: f64 = 1e-8;
const REL_LOGISTIC_MAX_ITER: usize = 50;

/// Design matrix of the relationship model: [1, f, covariates] over the
/// given prediction vector and downstream design (whose first column is the
/// intercept).
fn relationship_design<F: Real>(x: &Matrix<F>, f: &[F]) -> Matrix<F> {
    let (rows, p) = (x.rows(), x.cols());
    let mut out = Matrix::zeros(rows, p + 1);
    for r in 0..rows {
        out[(r, 0)] = F::one();
        out[(r, 1)] = f[r];
        for c in 1..p {
            out[(r, c + 1)] = x[(r, c)];
        }
    }
    out
}

fn take_rows<F: Real>(x: &Matrix<F>, idx: &[usize]) -> Matrix<F> {
    let mut out = Matrix::zeros(idx.len(), x.cols());
    for (r, &i) in idx.iter().enumerate() {
        for c in 0..x.cols() {
            out[(r, c)] = x[(i, c)];
        }
    }
    out
}

fn take<F: Copy>(v: &[F], idx: &[usize]) -> Vec<F> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Median along each coordinate of the replicate matrix (rows = replicates),
/// averaging the two middle order statistics for even counts.
fn coordinate_medians<F: Real>(reps: &[Vec<F>]) -> Vec<F> {
    let b = reps.len();
    let p = reps[0].len();
    let mut out = Vec::with_capacity(p);
    for j in 0..p {
        let mut col: Vec<F> = reps.iter().map(|r| r[j]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).expect("non-finite replicate"));
        let med = if b % 2 == 1 {
            col[b / 2]
        } else {
            (col[b / 2 - 1] + col[b / 2]) / F::from_f64_lossy(2.0)
        };
        out.push(med);
    }
    out
}

pub fn fit_postpi_boot<F: Real>(
    formula: &Formula,
    data: &StackedDataset,
    split: &Split,
    config: &MethodConfig,
) -> Result<IpdFit<F>> {
    let (x_l, y_l) = data.design_matrix(&split.labeled, formula, Outcome::Observed)?;
    let (_, f_l) = data.design_matrix(&split.labeled, formula, Outcome::Predicted)?;
    let (x_u, f_u) = data.design_matrix(&split.unlabeled, formula, Outcome::Predicted)?;
    let (x_l, y_l, f_l): (Matrix<F>, Vec<F>, Vec<F>) =
        (convert_matrix(&x_l), convert_vec(&y_l), convert_vec(&f_l));
    let (x_u, f_u): (Matrix<F>, Vec<F>) = (convert_matrix(&x_u), convert_vec(&f_u));

    let n = split.n_labeled();
    let big_n = split.n_unlabeled();
    let p = x_u.cols();
    let rel_x = relationship_design(&x_l, &f_l);
    let p_rel = rel_x.cols();
    if n <= p_rel {
        return Err(IpdError::Validation(format!(
            "relationship model with {p_rel} coefficients needs more than {p_rel} labeled rows \
             (got {n})"
        )));
    }

    // initial relationship fit: a diagnostic, and an early failure if the
    // predictions carry no usable signal (e.g. constant f)
    let is_logistic = config.estimand == Estimand::Logistic;
    let initial_rel = fit_relationship(&rel_x, &y_l, is_logistic).map_err(|e| {
        IpdError::DegeneratePredictions(format!(
            "relationship model of the observed outcome on the predictions failed: {e}"
        ))
    })?;

    let rel_u = relationship_design(&x_u, &f_u);
    let mut replicates: Vec<Vec<F>> = Vec::with_capacity(config.nboot);
    for b in 0..config.nboot {
        let bb = b as u32;
        let mut rng_l = RngStream::new(config.seed, stream_id(domains::POSTPI, 3 * bb));
        let idx_l = resample_indices(n, &mut rng_l);
        let rel_xb = take_rows(&rel_x, &idx_l);
        let y_b = take(&y_l, &idx_l);
        let rel_b = match fit_relationship(&rel_xb, &y_b, is_logistic) {
            Ok(f) => f,
            Err(_) => continue,
        };

        let mut rng_u = RngStream::new(config.seed, stream_id(domains::POSTPI, 3 * bb + 1));
        let idx_u = resample_indices(big_n, &mut rng_u);
        let xu_b = take_rows(&x_u, &idx_u);
        let rel_ub = take_rows(&rel_u, &idx_u);

        let mut rng_y = RngStream::new(config.seed, stream_id(domains::POSTPI, 3 * bb + 2));
        let mu = rel_ub.matvec(&rel_b.coefficients);
        let mut y_star = Vec::with_capacity(big_n);
        if is_logistic {
            for &m in &mu {
                let pr = expit(m);
                let u = F::from_f64_lossy(rng_y.next_f64());
                y_star.push(if u < pr { F::one() } else { F::zero() });
            }
        } else {
            let sigma = rel_b.sigma;
            for &m in &mu {
                let z = F::from_f64_lossy(rng_y.next_normal());
                y_star.push(m + sigma * z);
            }
        }

        let downstream = if is_logistic {
            logistic_solve(
                &xu_b,
                &y_star,
                F::from_f64_lossy(REL_LOGISTIC_TOL),
                REL_LOGISTIC_MAX_ITER,
            )
            .map(|f| f.coefficients)
        } else {
            ols_solve(&xu_b, &y_star).map(|f| f.coefficients)
        };
        match downstream {
            Ok(theta) => replicates.push(theta),
            Err(_) => continue,
        }
    }

    let failed = config.nboot - replicates.len();
    if failed as f64 > MAX_FAILURE_FRACTION * config.nboot as f64 {
        return Err(IpdError::FailureRate(format!(
            "{failed} of {} bootstrap replicates failed",
            config.nboot
        )));
    }

    let estimates = coordinate_medians(&replicates);
    let mut covariance = Matrix::zeros(p, p);
    for j in 0..p {
        let col: Vec<F> = replicates.iter().map(|r| r[j]).collect();
        covariance[(j, j)] = variance(&col);
    }

    let mut intermediates = BTreeMap::new();
    intermediates.insert("relationship".to_string(), initial_rel.coefficients);
    intermediates.insert(
        "nboot_effective".to_string(),
        vec![F::from_usize(replicates.len()).unwrap()],
    );
    finalize_fit(
        Method::PostpiBoot,
        config.estimand,
        term_names(config.estimand, formula, config.q),
        estimates,
        &covariance,
        n,
        big_n,
        config.alpha,
        intermediates,
    )
}

struct RelationshipFit<F> {
    coefficients: Vec<F>,
    /// Residual standard deviation sqrt(RSS/(n − p)); zero for logistic.
    sigma: F,
}

fn fit_relationship<F: Real>(
    x: &Matrix<F>,
    y: &[F],
    logistic: bool,
) -> Result<RelationshipFit<F>> {
    if logistic {
        let fit = logistic_solve(x, y, F::from_f64_lossy(REL_LOGISTIC_TOL), REL_LOGISTIC_MAX_ITER)?;
        Ok(RelationshipFit {
            coefficients: fit.coefficients,
            sigma: F::zero(),
        })
    } else {
        let fit = ols_solve(x, y)?;
        let fitted = x.matvec(&fit.coefficients);
        let rss = y
            .iter()
            .zip(&fitted)
            .fold(F::zero(), |s, (&a, &b)| s + (a - b) * (a - b));
        let df = F::from_usize(x.rows() - x.cols()).unwrap();
        Ok(RelationshipFit {
            coefficients: fit.coefficients,
            sigma: (rss / df).sqrt(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::formula::parse_formula;
    use crate::dataset::Label;

    /// Stacked dataset with a linear signal and noisy-but-informative
    /// predictions: Y = 1 + 2·X1 + ε, f = Y-signal + small error.
    fn synthetic(n: usize, big_n: usize, seed: u64, logistic: bool) -> StackedDataset {
        let mut rng = RngStream::new(seed, stream_id(domains::TRUTH, 9));
        let total = n + big_n;
        let mut labels = Vec::with_capacity(total);
        let mut y = Vec::with_capacity(total);
        let mut f = Vec::with_capacity(total);
        let mut x1 = Vec::with_capacity(total);
        for i in 0..total {
            let labeled = i < n;
            let x = rng.next_normal();
            let signal = 1.0 + 2.0 * x;
            let (yv, fv) = if logistic {
                let pr = 1.0 / (1.0 + (-signal).exp());
                let yv = if rng.next_f64() < pr { 1.0 } else { 0.0 };
                // predictions: the outcome with 15% label noise
                let fv = if rng.next_f64() < 0.15 { 1.0 - yv } else { yv };
                (yv, fv)
            } else {
                let yv = signal + rng.next_normal();
                let fv = yv + 0.25 * rng.next_normal();
                (yv, fv)
            };
            labels.push(if labeled { Label::Labeled } else { Label::Unlabeled });
            y.push(if labeled { Some(yv) } else { None });
            f.push(Some(fv));
            x1.push(Some(x));
        }
        StackedDataset::from_parts(
            "set",
            0,
            vec!["Y".into(), "f".into(), "X1".into()],
            labels,
            vec![y, f, x1],
        )
        .unwrap()
    }

    fn config(estimand: Estimand, nboot: usize, seed: u64) -> MethodConfig {
        let mut c = MethodConfig::new(Method::PostpiBoot, estimand, seed);
        c.nboot = nboot;
        c
    }

    #[test]
    fn ols_bootstrap_recovers_slope_and_is_deterministic() {
        let data = synthetic(120, 240, 31, false);
        let fml = parse_formula("Y - f ~ X1").unwrap();
        let c = config(Estimand::Ols, 60, 7);
        let fit: IpdFit<f64> = fit_ipd_boot(&fml, &data, &c);
        assert_eq!(fit.terms, vec!["(Intercept)", "X1"]);
        assert!((fit.estimates[1] - 2.0).abs() < 0.3, "slope {}", fit.estimates[1]);
        assert!(fit.std_errors.iter().all(|&s| s > 0.0));
        assert_eq!(fit.intermediates["nboot_effective"], vec![60.0]);
        // relationship model: Y ≈ 0 + 1·f on these predictions
        let rel = &fit.intermediates["relationship"];
        assert_eq!(rel.len(), 3);
        assert!((rel[1] - 1.0).abs() < 0.2, "rel slope {}", rel[1]);

        let again: IpdFit<f64> = fit_ipd_boot(&fml, &data, &c);
        for (a, b) in fit.estimates.iter().zip(&again.estimates) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in fit.std_errors.iter().zip(&again.std_errors) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        // a different bootstrap seed moves the replicate draws
        let c2 = config(Estimand::Ols, 60, 8);
        let other: IpdFit<f64> = fit_ipd_boot(&fml, &data, &c2);
        assert_ne!(fit.estimates[1].to_bits(), other.estimates[1].to_bits());
    }

    fn fit_ipd_boot(fml: &Formula, data: &StackedDataset, c: &MethodConfig) -> IpdFit<f64> {
        let split = data.split().unwrap();
        fit_postpi_boot(fml, data, &split, c).unwrap()
    }

    #[test]
    fn logistic_bootstrap_runs_and_stays_finite() {
        let data = synthetic(150, 200, 5, true);
        let fml = parse_formula("Y - f ~ X1").unwrap();
        let c = config(Estimand::Logistic, 40, 11);
        let split = data.split().unwrap();
        let fit: IpdFit<f64> = fit_postpi_boot(&fml, &data, &split, &c).unwrap();
        assert!(fit.estimates.iter().all(|e| e.is_finite()));
        assert!(fit.std_errors.iter().all(|&s| s > 0.0 && s.is_finite()));
        assert!(fit.estimates[1] > 0.0, "slope sign {}", fit.estimates[1]);
    }

    #[test]
    fn constant_predictions_fail_the_relationship_fit() {
        let mut data = synthetic(40, 80, 2, false);
        // overwrite f with a constant: collinear with the intercept
        let total = 120;
        let names = vec!["Y", "f", "X1"];
        let cols: Vec<Vec<Option<f64>>> = names
            .iter()
            .map(|n| {
                if *n == "f" {
                    vec![Some(1.0); total]
                } else {
                    data.column(n).unwrap().to_vec()
                }
            })
            .collect();
        data = StackedDataset::from_parts(
            "set",
            0,
            names.iter().map(|s| s.to_string()).collect(),
            (0..total)
                .map(|i| if i < 40 { Label::Labeled } else { Label::Unlabeled })
                .collect(),
            cols,
        )
        .unwrap();
        let fml = parse_formula("Y - f ~ X1").unwrap();
        let split = data.split().unwrap();
        let c = config(Estimand::Ols, 20, 3);
        let err = fit_postpi_boot::<f64>(&fml, &data, &split, &c).unwrap_err();
        assert!(
            matches!(err, IpdError::DegeneratePredictions(_)),
            "got {err:?}"
        );
    }

    #[test]
    fn median_of_even_replicate_count_averages_middles() {
        let reps = vec![
            vec![1.0, 10.0],
            vec![2.0, 20.0],
            vec![3.0, 30.0],
            vec![4.0, 40.0],
        ];
        assert_eq!(coordinate_medians(&reps), vec![2.5, 25.0]);
        let odd = vec![vec![5.0], vec![1.0], vec![3.0]];
        assert_eq!(coordinate_medians(&odd), vec![3.0]);
    }
}
