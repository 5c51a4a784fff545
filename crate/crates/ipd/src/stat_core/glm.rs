//! Regression solvers (least squares and Newton–Raphson logistic) and the
//! type-1 empirical quantile.

use crate::error::{IpdError, Result};
use crate::stat_core::linalg::Matrix;
use crate::stat_core::Real;

/// Relative singular-value threshold below which a design is treated as
/// rank-deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Default logistic Newton controls: score max-norm tolerance and iteration
/// budget.
pub const LOGISTIC_TOL: f64 = 1e-8;
pub const LOGISTIC_MAX_ITER: usize = 50;

/// Coefficient max-norm beyond which the logistic likelihood is flat to
/// machine precision and the data are treated as separable.
pub const SEPARATION_BOUND: f64 = 30.0;

#[derive(Clone, Debug)]
pub struct GlmFit<F> {
    pub coefficients: Vec<F>,
    /// Max-norm of the score (gradient) at the returned coefficients.
    pub gradient_norm: F,
    /// XᵀX for least squares; Hessian of the negative log-likelihood for
    /// logistic. Symmetric positive semi-definite in both cases.
    pub hessian: Matrix<F>,
    pub iterations: usize,
    pub converged: bool,
}

#[inline]
pub fn expit<F: Real>(t: F) -> F {
    // guard both tails so exp never overflows
    let cap = F::from_f64_lossy(36.0);
    if t > cap {
        return F::one() / (F::one() + (-cap).exp());
    }
    if t < -cap {
        return F::one() / (F::one() + cap.exp());
    }
    F::one() / (F::one() + (-t).exp())
}

/// Least squares of y on the columns of x via Householder QR.
pub fn ols_solve<F: Real>(x: &Matrix<F>, y: &[F]) -> Result<GlmFit<F>> {
    if x.rows() <= x.cols() {
        return Err(IpdError::Validation(format!(
            "least squares needs more rows than columns ({} rows, {} columns)",
            x.rows(),
            x.cols()
        )));
    }
    if x.is_rank_deficient(F::from_f64_lossy(RANK_TOL)) {
        return Err(IpdError::Singular(
            "design matrix is rank-deficient".into(),
        ));
    }
    let coefficients = x.qr_least_squares(y)?;
    let fitted = x.matvec(&coefficients);
    let resid: Vec<F> = y.iter().zip(&fitted).map(|(&a, b)| a - *b).collect();
    let score = x.transpose().matvec(&resid);
    let gradient_norm = score
        .iter()
        .fold(F::zero(), |acc, &v| acc.max(v.abs()));
    Ok(GlmFit {
        coefficients,
        gradient_norm,
        hessian: x.gram(),
        iterations: 1,
        converged: true,
    })
}

/// Logistic log-likelihood (internal and test use).
pub fn logistic_loglik<F: Real>(x: &Matrix<F>, y: &[F], beta: &[F]) -> F {
    let eta = x.matvec(beta);
    let mut ll = F::zero();
    for (&e, &yi) in eta.iter().zip(y) {
        // log(1+exp(e)) computed stably from the positive side
        let log1pexp = if e > F::zero() {
            e + (F::one() + (-e).exp()).ln()
        } else {
            (F::one() + e.exp()).ln()
        };
        ll = ll + yi * e - log1pexp;
    }
    ll
}

/// Newton–Raphson maximum likelihood for logistic regression.
///
/// Converges when the score max-norm drops below `tol`; once there, one more
/// full Newton step is taken to push the score to its machine floor so that
/// downstream identity checks see solver noise well under their tolerances.
pub fn logistic_solve<F: Real>(
    x: &Matrix<F>,
    y: &[F],
    tol: F,
    max_iter: usize,
) -> Result<GlmFit<F>> {
    let n = x.rows();
    assert_eq!(n, y.len(), "outcome length mismatch");
    let any_one = y.iter().any(|&v| v > F::from_f64_lossy(0.5));
    let any_zero = y.iter().any(|&v| v <= F::from_f64_lossy(0.5));
    if !(any_one && any_zero) {
        return Err(IpdError::Validation(
            "logistic outcome contains a single class".into(),
        ));
    }
    let p = x.cols();
    let mut beta = vec![F::zero(); p];
    let score_and_hessian = |beta: &[F]| {
        let mut score = vec![F::zero(); p];
        let mut hess = Matrix::zeros(p, p);
        for r in 0..n {
            let row = x.row(r);
            let eta = row.iter().zip(beta).fold(F::zero(), |s, (&a, &b)| s + a * b);
            let mu = expit(eta);
            let w = mu * (F::one() - mu);
            let e = y[r] - mu;
            for i in 0..p {
                score[i] = score[i] + row[i] * e;
                for j in i..p {
                    hess[(i, j)] = hess[(i, j)] + row[i] * row[j] * w;
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                hess[(i, j)] = hess[(j, i)];
            }
        }
        (score, hess)
    };
    let max_abs = |v: &[F]| v.iter().fold(F::zero(), |a, &b| a.max(b.abs()));

    let mut polished = false;
    for iter in 1..=max_iter {
        let (score, hess) = score_and_hessian(&beta);
        let norm = max_abs(&score);
        if norm <= tol {
            if polished {
                return Ok(GlmFit {
                    coefficients: beta,
                    gradient_norm: norm,
                    hessian: hess,
                    iterations: iter - 1,
                    converged: true,
                });
            }
            polished = true;
        }
        let step = hess
            .lu_solve(&score)
            .map_err(|_| IpdError::Singular("logistic Hessian is singular".into()))?;
        for i in 0..p {
            beta[i] = beta[i] + step[i];
        }
        if max_abs(&beta) > F::from_f64_lossy(SEPARATION_BOUND) {
            return Err(IpdError::Separation(
                "coefficients diverged beyond the separation bound".into(),
            ));
        }
    }
    let (score, hess) = score_and_hessian(&beta);
    let norm = max_abs(&score);
    if norm <= tol {
        return Ok(GlmFit {
            coefficients: beta,
            gradient_norm: norm,
            hessian: hess,
            iterations: max_iter,
            converged: true,
        });
    }
    Err(IpdError::NonConvergence(format!(
        "logistic Newton stopped after {max_iter} iterations with score norm {norm}"
    )))
}

/// Type-1 (left-continuous inverse CDF) empirical quantile: the smallest
/// sample value v with #{y ≤ v}/n ≥ q.
pub fn sample_quantile<F: Real>(y: &[F], q: f64) -> F {
    assert!(!y.is_empty(), "quantile of an empty sample");
    assert!(q > 0.0 && q < 1.0, "quantile level outside (0,1)");
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("quantile of non-finite values"));
    let n = sorted.len();
    let k = (n as f64 * q).ceil() as usize;
    sorted[k.max(1) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows)
    }

    #[test]
    fn ols_exact_interpolation() {
        let x = design(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]);
        let fit = ols_solve(&x, &[0.0, 1.0, 2.0]).unwrap();
        assert!((fit.coefficients[0]).abs() < 1e-12);
        assert!((fit.coefficients[1] - 1.0).abs() < 1e-12);
        assert!(fit.converged);
    }

    #[test]
    fn ols_constant_outcome_is_intercept_only() {
        let x = design(&[
            vec![1.0, 0.3, -1.0],
            vec![1.0, -0.5, 0.4],
            vec![1.0, 1.2, 0.9],
            vec![1.0, 0.1, -0.2],
            vec![1.0, -0.9, 0.6],
        ]);
        let fit = ols_solve(&x, &[5.0; 5]).unwrap();
        assert!((fit.coefficients[0] - 5.0).abs() < 1e-12);
        assert!(fit.coefficients[1].abs() < 1e-12);
        assert!(fit.coefficients[2].abs() < 1e-12);
    }

    #[test]
    fn ols_rejects_rank_deficiency_and_short_data() {
        let x = design(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]);
        assert!(matches!(
            ols_solve(&x, &[1.0, 2.0, 3.0]),
            Err(IpdError::Singular(_))
        ));
        let x = design(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert!(matches!(
            ols_solve(&x, &[1.0, 2.0]),
            Err(IpdError::Validation(_))
        ));
    }

    #[test]
    fn logistic_symmetric_data_zero_intercept() {
        // (x=−1, y=0), (x=1, y=1) duplicated 50× with 10% flips on both sides
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..50 {
            let flip = i % 10 == 0;
            rows.push(vec![1.0, -1.0]);
            y.push(if flip { 1.0 } else { 0.0 });
            rows.push(vec![1.0, 1.0]);
            y.push(if flip { 0.0 } else { 1.0 });
        }
        let fit = logistic_solve(&design(&rows), &y, 1e-8, 50).unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients[0].abs() < 1e-8, "intercept {}", fit.coefficients[0]);
        assert!(fit.coefficients[1] > 0.0);
    }

    #[test]
    fn logistic_single_class_rejected() {
        let x = design(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert!(matches!(
            logistic_solve(&x, &[1.0, 1.0], 1e-8, 50),
            Err(IpdError::Validation(_))
        ));
    }

    #[test]
    fn logistic_separation_detected() {
        // perfectly separated: y = 1 exactly when x > 0
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let v = (i as f64 - 9.5) / 3.0;
            rows.push(vec![1.0, v]);
            y.push(if v > 0.0 { 1.0 } else { 0.0 });
        }
        assert!(matches!(
            logistic_solve(&design(&rows), &y, 1e-8, 200),
            Err(IpdError::Separation(_))
        ));
    }

    #[test]
    fn logistic_solution_beats_coefficient_grid() {
        // 30-row instance; the fitted likelihood must dominate a 0.01-step
        // grid around the solution (grid-search oracle)
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut state = 12345u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        for _ in 0..30 {
            let x1 = next() * 2.0 - 1.0;
            let x2 = next() * 2.0 - 1.0;
            let p = 1.0 / (1.0 + (-(0.3 + 0.8 * x1 - 0.5 * x2)).exp());
            rows.push(vec![1.0, x1, x2]);
            y.push(if next() < p { 1.0 } else { 0.0 });
        }
        let x = design(&rows);
        let fit = logistic_solve(&x, &y, 1e-8, 50).unwrap();
        let ll_opt = logistic_loglik(&x, &y, &fit.coefficients);
        for di in -1..=1 {
            for dj in -1..=1 {
                for dk in -1..=1 {
                    if (di, dj, dk) == (0, 0, 0) {
                        continue;
                    }
                    let cand = vec![
                        fit.coefficients[0] + 0.01 * di as f64,
                        fit.coefficients[1] + 0.01 * dj as f64,
                        fit.coefficients[2] + 0.01 * dk as f64,
                    ];
                    assert!(ll_opt >= logistic_loglik(&x, &y, &cand));
                }
            }
        }
    }

    #[test]
    fn logistic_score_and_hessian_match_finite_differences() {
        // analytic score/Hessian vs central differences of the log-likelihood
        let rows = vec![
            vec![1.0, 0.2],
            vec![1.0, -0.7],
            vec![1.0, 1.1],
            vec![1.0, -0.3],
            vec![1.0, 0.9],
            vec![1.0, -1.4],
        ];
        let y = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let x = design(&rows);
        let beta = vec![0.15, -0.4];
        let h = 1e-5;
        // analytic pieces at beta
        let p = 2;
        let mut score = vec![0.0; p];
        let mut hess = Matrix::<f64>::zeros(p, p);
        for r in 0..x.rows() {
            let row = x.row(r);
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = expit(eta);
            for i in 0..p {
                score[i] += row[i] * (y[r] - mu);
                for j in 0..p {
                    hess[(i, j)] += row[i] * row[j] * mu * (1.0 - mu);
                }
            }
        }
        for i in 0..p {
            let mut bp = beta.clone();
            let mut bm = beta.clone();
            bp[i] += h;
            bm[i] -= h;
            let fd = (logistic_loglik(&x, &y, &bp) - logistic_loglik(&x, &y, &bm)) / (2.0 * h);
            assert!(
                (fd - score[i]).abs() <= 1e-4 * score[i].abs().max(1.0),
                "score fd {fd} vs {}",
                score[i]
            );
            for j in 0..p {
                let mut bpp = beta.clone();
                bpp[i] += h;
                bpp[j] += h;
                let mut bpm = beta.clone();
                bpm[i] += h;
                bpm[j] -= h;
                let mut bmp = beta.clone();
                bmp[i] -= h;
                bmp[j] += h;
                let mut bmm = beta.clone();
                bmm[i] -= h;
                bmm[j] -= h;
                let fd2 = (logistic_loglik(&x, &y, &bpp) - logistic_loglik(&x, &y, &bpm)
                    - logistic_loglik(&x, &y, &bmp)
                    + logistic_loglik(&x, &y, &bmm))
                    / (4.0 * h * h);
                // Hessian of the NEGATIVE log-likelihood flips the sign
                assert!(
                    (fd2 + hess[(i, j)]).abs() <= 1e-4 * hess[(i, j)].abs().max(1.0),
                    "hessian fd {fd2} vs {}",
                    -hess[(i, j)]
                );
            }
        }
    }

    #[test]
    fn quantile_matches_sort_oracle() {
        assert_eq!(sample_quantile(&[1.0, 2.0, 3.0], 0.5), 2.0);
        assert_eq!(sample_quantile(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.0);
        // random 100-vector: smallest v with rank ≥ ⌈nq⌉ (sort oracle)
        let mut v: Vec<f64> = (0..100)
            .map(|i| ((i * 37 + 11) % 100) as f64 / 7.0 - 3.0)
            .collect();
        let got = sample_quantile(&v, 0.9);
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle = v[(100.0f64 * 0.9).ceil() as usize - 1];
        assert_eq!(got, oracle);
    }

    #[test]
    fn quantile_permutation_invariant_and_monotone() {
        let base = vec![0.4, -1.2, 3.3, 0.0, 2.2, -0.7, 1.1];
        let mut rev = base.clone();
        rev.reverse();
        for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
            assert_eq!(sample_quantile(&base, q), sample_quantile(&rev, q));
        }
        let qs = [0.05, 0.2, 0.4, 0.6, 0.8, 0.95];
        for w in qs.windows(2) {
            assert!(sample_quantile(&base, w[0]) <= sample_quantile(&base, w[1]));
        }
    }
}
