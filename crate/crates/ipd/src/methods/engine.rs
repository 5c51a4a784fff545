//! Shared estimating-equation engine.
//!
//! Every non-bootstrap method solves the same weighted equation
//!
//! ```text
//! 0 = mean_L[ψ(θ; Y, x) − w ∘ ψ(θ; f, x)] + w ∘ mean_U[ψ(θ; f, x)]
//! ```
//!
//! with a per-coordinate weight vector w: classic/oracle/naive use w = 0 (on
//! their respective fitting rows), ppi uses w = 1, ppi_plusplus a tuned
//! scalar, pspa a tuned diagonal. Sharing the arithmetic makes the reduction
//! identities (w = 0 ⇒ classic, w = 1 ⇒ ppi) hold bit-for-bit, not just to
//! tolerance.

use crate::dataset::formula::Formula;
use crate::dataset::{Outcome, Split, StackedDataset};
use crate::error::{IpdError, Result};
use crate::methods::{Estimand, MethodConfig};
use crate::stat_core::glm::expit;
use crate::stat_core::linalg::Matrix;
use crate::stat_core::sandwich::sandwich_variance;
use crate::stat_core::{covariance, covariance_matrix, cross_covariance_matrix, variance, Real};

/// Residual max-norm at which the damped Newton iteration is considered
/// converged (one further full step is then taken to reach the machine
/// floor).
const NEWTON_TOL: f64 = 1e-9;
const NEWTON_MAX_ITER: usize = 100;
const NEWTON_MAX_HALVINGS: usize = 20;
/// Coefficient max-norm guard for the logistic equation (flat likelihood).
const LOGISTIC_BOUND: f64 = 30.0;
/// Relative width target of the quantile bisection bracket.
const QUANTILE_BRACKET: f64 = 1e-9;

pub(crate) struct Engine<F> {
    estimand: Estimand,
    q: f64,
    x_l: Matrix<F>,
    y_l: Vec<F>,
    f_l: Vec<F>,
    x_u: Matrix<F>,
    f_u: Vec<F>,
}

pub(crate) struct EngineFit<F> {
    pub theta: Vec<F>,
    pub covariance: Matrix<F>,
}

pub(crate) struct TunedLambda<F> {
    pub value: F,
    /// True when the variance denominator was non-positive (weight forced
    /// to zero).
    pub degenerate: bool,
}

pub(crate) struct TunedOmega<F> {
    pub values: Vec<F>,
    pub degenerate_count: usize,
}

pub(crate) fn convert_matrix<F: Real>(m: &Matrix<f64>) -> Matrix<F> {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            out[(r, c)] = F::from_f64_lossy(m[(r, c)]);
        }
    }
    out
}

pub(crate) fn convert_vec<F: Real>(v: &[f64]) -> Vec<F> {
    v.iter().map(|&x| F::from_f64_lossy(x)).collect()
}

fn max_abs<F: Real>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |a, &b| a.max(b.abs()))
}

/// Pull one column over a row subset, requiring finite values.
fn finite_column<F: Real>(
    data: &StackedDataset,
    name: &str,
    rows: &[usize],
    context: &str,
) -> Result<Vec<F>> {
    let col = data
        .column(name)
        .ok_or_else(|| IpdError::Schema(format!("missing column {name:?}")))?;
    let mut out = Vec::with_capacity(rows.len());
    for &r in rows {
        match col[r] {
            Some(v) if v.is_finite() => out.push(F::from_f64_lossy(v)),
            _ => {
                return Err(IpdError::Validation(format!(
                    "{context}: column {name:?} is missing or non-finite on data row {}",
                    r + 1
                )))
            }
        }
    }
    Ok(out)
}

impl<F: Real> Engine<F> {
    /// Standard construction: labeled rows feed the Y-side, unlabeled rows
    /// the prediction side.
    pub fn from_dataset(
        formula: &Formula,
        data: &StackedDataset,
        split: &Split,
        config: &MethodConfig,
    ) -> Result<Self> {
        let (x_l, y_l, f_l, x_u, f_u) = if config.estimand.is_regression() {
            let (x_l, y_l) = data.design_matrix(&split.labeled, formula, Outcome::Observed)?;
            let (_, f_l) = data.design_matrix(&split.labeled, formula, Outcome::Predicted)?;
            let (x_u, f_u) = data.design_matrix(&split.unlabeled, formula, Outcome::Predicted)?;
            (
                convert_matrix(&x_l),
                convert_vec(&y_l),
                convert_vec(&f_l),
                convert_matrix(&x_u),
                convert_vec(&f_u),
            )
        } else {
            let y_l = finite_column(data, &formula.observed, &split.labeled, "labeled rows")?;
            let f_l = finite_column(data, &formula.predicted, &split.labeled, "labeled rows")?;
            let f_u =
                finite_column(data, &formula.predicted, &split.unlabeled, "unlabeled rows")?;
            (Matrix::zeros(0, 0), y_l, f_l, Matrix::zeros(0, 0), f_u)
        };
        let eng = Engine {
            estimand: config.estimand,
            q: config.q.unwrap_or(0.5),
            x_l,
            y_l,
            f_l,
            x_u,
            f_u,
        };
        eng.check_sizes()?;
        Ok(eng)
    }

    /// Benchmark construction: the "labeled" slot holds the unlabeled rows
    /// with either their observed outcome (oracle) or their predictions
    /// (naive). Callers fit with w = 0, so the prediction side is inert.
    pub fn unlabeled_only(
        formula: &Formula,
        data: &StackedDataset,
        split: &Split,
        config: &MethodConfig,
        use_observed: bool,
    ) -> Result<Self> {
        let outcome_kind = if use_observed {
            Outcome::Observed
        } else {
            Outcome::Predicted
        };
        let context = "oracle benchmark needs the observed outcome on every unlabeled row";
        let (x, y, f) = if config.estimand.is_regression() {
            let (x, y) = data
                .design_matrix(&split.unlabeled, formula, outcome_kind)
                .map_err(|e| {
                    if use_observed {
                        IpdError::Validation(format!("{context}: {e}"))
                    } else {
                        e
                    }
                })?;
            let (_, f) = data.design_matrix(&split.unlabeled, formula, Outcome::Predicted)?;
            (x, y, f)
        } else {
            let name = if use_observed {
                &formula.observed
            } else {
                &formula.predicted
            };
            let y = finite_column::<f64>(data, name, &split.unlabeled, context)?;
            let f = finite_column::<f64>(data, &formula.predicted, &split.unlabeled, context)?;
            (Matrix::zeros(0, 0), y, f)
        };
        let eng = Engine {
            estimand: config.estimand,
            q: config.q.unwrap_or(0.5),
            x_l: convert_matrix(&x),
            y_l: convert_vec(&y),
            f_l: convert_vec(&f),
            x_u: convert_matrix(&x),
            f_u: convert_vec(&f),
        };
        eng.check_sizes()?;
        Ok(eng)
    }

    fn check_sizes(&self) -> Result<()> {
        let (n, nn) = (self.n(), self.n_u());
        if self.estimand.is_regression() {
            let p = self.x_l.cols();
            if n < p + 2 || nn < p + 2 {
                return Err(IpdError::Validation(format!(
                    "regression with {p} coefficients needs more than {} labeled and \
                     unlabeled rows (got {n} and {nn})",
                    p + 1
                )));
            }
        } else if n < 2 || nn < 2 {
            return Err(IpdError::Validation(format!(
                "need at least 2 labeled and 2 unlabeled rows (got {n} and {nn})"
            )));
        }
        Ok(())
    }

    fn n(&self) -> usize {
        self.y_l.len()
    }

    fn n_u(&self) -> usize {
        self.f_u.len()
    }

    pub fn dim(&self) -> usize {
        if self.estimand.is_regression() {
            self.x_l.cols()
        } else {
            1
        }
    }

    pub fn fit(&self, w: &[F]) -> Result<EngineFit<F>> {
        let theta = self.solve(w)?;
        let covariance = self.covariance_at(&theta, w)?;
        Ok(EngineFit { theta, covariance })
    }

    /// Solve the weighted estimating equation for θ.
    pub fn solve(&self, w: &[F]) -> Result<Vec<F>> {
        assert_eq!(w.len(), self.dim(), "weight dimension mismatch");
        match self.estimand {
            Estimand::Mean => Ok(vec![self.solve_mean(w[0])]),
            Estimand::Quantile => Ok(vec![self.solve_quantile(w[0])]),
            Estimand::Ols => self.solve_ols(w),
            Estimand::Logistic => self.solve_logistic(w),
        }
    }

    /// The mean equation is linear; the closed form below is what a single
    /// Newton step from zero produces. Grouped as mean_L(Y − w·f) + w·mean_U(f)
    /// so that w = 1 reproduces the rectified-mean identity exactly.
    fn solve_mean(&self, w: F) -> F {
        let ninv = F::one() / F::from_usize(self.n()).unwrap();
        let mut rect = F::zero();
        for (&y, &f) in self.y_l.iter().zip(&self.f_l) {
            rect = rect + (y - w * f);
        }
        rect = rect * ninv;
        let mut mu = F::zero();
        for &f in &self.f_u {
            mu = mu + f;
        }
        mu = mu / F::from_usize(self.n_u()).unwrap();
        rect + w * mu
    }

    /// Value of the combined quantile equation at t.
    fn quantile_g(&self, t: F, w: F) -> F {
        let frac = |vals: &[F]| {
            let count = vals.iter().filter(|&&v| v <= t).count();
            F::from_usize(count).unwrap() / F::from_usize(vals.len()).unwrap()
        };
        frac(&self.y_l) - w * frac(&self.f_l) + w * frac(&self.f_u)
            - F::from_f64_lossy(self.q)
    }

    /// Bisection on the combined step function, then a snap to the smallest
    /// jump point in the final bracket: the equation only changes value at
    /// data points, so the root is returned as the left-most data value at
    /// which the equation is non-negative (for w = 0 this is exactly the
    /// type-1 sample quantile).
    fn solve_quantile(&self, w: F) -> F {
        let mut candidates: Vec<F> = self
            .y_l
            .iter()
            .chain(&self.f_l)
            .chain(&self.f_u)
            .copied()
            .collect();
        candidates.sort_by(|a, b| a.partial_cmp(b).expect("non-finite data value"));
        candidates.dedup();
        let top = *candidates.last().unwrap();
        let bottom = candidates[0];
        if bottom == top {
            return bottom;
        }
        let mut lo = bottom - F::one();
        let mut hi = top;
        let tol = (hi - lo) * F::from_f64_lossy(QUANTILE_BRACKET);
        while hi - lo > tol {
            let mid = (lo + hi) / F::from_f64_lossy(2.0);
            if mid <= lo || mid >= hi {
                break; // bracket at floating-point resolution
            }
            if self.quantile_g(mid, w) >= F::zero() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // smallest jump point in (lo, hi] where the equation is ≥ 0
        candidates
            .iter()
            .copied()
            .find(|&c| c > lo && c <= hi && self.quantile_g(c, w) >= F::zero())
            .unwrap_or(hi)
    }

    /// Per-coordinate weighted moments of the linear (ols) equation:
    /// right-hand side and coefficient matrix of g(θ) = rhs − Mθ.
    fn ols_system(&self, w: &[F]) -> (Vec<F>, Matrix<F>) {
        let p = self.dim();
        let n = F::from_usize(self.n()).unwrap();
        let nn = F::from_usize(self.n_u()).unwrap();
        let g_l = self.x_l.gram().scale(F::one() / n);
        let g_u = self.x_u.gram().scale(F::one() / nn);
        let b_y = self.x_l.transpose().matvec(&self.y_l);
        let b_fl = self.x_l.transpose().matvec(&self.f_l);
        let b_fu = self.x_u.transpose().matvec(&self.f_u);
        let mut rhs = vec![F::zero(); p];
        let mut m = Matrix::zeros(p, p);
        for j in 0..p {
            rhs[j] = b_y[j] / n - w[j] * (b_fl[j] / n) + w[j] * (b_fu[j] / nn);
            for k in 0..p {
                m[(j, k)] = g_l[(j, k)] + w[j] * (g_u[(j, k)] - g_l[(j, k)]);
            }
        }
        (rhs, m)
    }

    fn solve_ols(&self, w: &[F]) -> Result<Vec<F>> {
        let (rhs, m) = self.ols_system(w);
        let eval = |theta: &[F]| {
            let mt = m.matvec(theta);
            let g: Vec<F> = rhs.iter().zip(&mt).map(|(&a, &b)| a - b).collect();
            (g, m.clone())
        };
        newton(self.dim(), &eval, None)
    }

    /// Weighted logistic equation value and its (negated) Jacobian at θ.
    fn logistic_pieces(&self, theta: &[F], w: &[F]) -> (Vec<F>, Matrix<F>) {
        let p = self.dim();
        let n = F::from_usize(self.n()).unwrap();
        let nn = F::from_usize(self.n_u()).unwrap();
        let mut g_y = vec![F::zero(); p];
        let mut g_fl = vec![F::zero(); p];
        let mut h_l = Matrix::<F>::zeros(p, p);
        for r in 0..self.n() {
            let row = self.x_l.row(r);
            let eta = row.iter().zip(theta).fold(F::zero(), |s, (&a, &b)| s + a * b);
            let mu = expit(eta);
            let var = mu * (F::one() - mu);
            for j in 0..p {
                g_y[j] = g_y[j] + row[j] * (self.y_l[r] - mu);
                g_fl[j] = g_fl[j] + row[j] * (self.f_l[r] - mu);
                for k in j..p {
                    h_l[(j, k)] = h_l[(j, k)] + row[j] * row[k] * var;
                }
            }
        }
        let mut g_fu = vec![F::zero(); p];
        let mut h_u = Matrix::<F>::zeros(p, p);
        for r in 0..self.n_u() {
            let row = self.x_u.row(r);
            let eta = row.iter().zip(theta).fold(F::zero(), |s, (&a, &b)| s + a * b);
            let mu = expit(eta);
            let var = mu * (F::one() - mu);
            for j in 0..p {
                g_fu[j] = g_fu[j] + row[j] * (self.f_u[r] - mu);
                for k in j..p {
                    h_u[(j, k)] = h_u[(j, k)] + row[j] * row[k] * var;
                }
            }
        }
        let mut g = vec![F::zero(); p];
        let mut a = Matrix::zeros(p, p);
        for j in 0..p {
            g[j] = g_y[j] / n - w[j] * (g_fl[j] / n) + w[j] * (g_fu[j] / nn);
            for k in j..p {
                let l = h_l[(j, k)] / n;
                let u = h_u[(j, k)] / nn;
                a[(j, k)] = l + w[j] * (u - l);
            }
        }
        // the row scaling by w breaks symmetry; fill the lower triangle from
        // the weighted upper-triangle formula, not by mirroring
        for j in 0..p {
            for k in 0..j {
                let l = h_l[(k, j)] / n;
                let u = h_u[(k, j)] / nn;
                a[(j, k)] = l + w[j] * (u - l);
            }
        }
        (g, a)
    }

    fn solve_logistic(&self, w: &[F]) -> Result<Vec<F>> {
        let eval = |theta: &[F]| self.logistic_pieces(theta, w);
        newton(self.dim(), &eval, Some(F::from_f64_lossy(LOGISTIC_BOUND)))
    }

    /// Covariance of θ̂ at the solution, per estimand.
    pub fn covariance_at(&self, theta: &[F], w: &[F]) -> Result<Matrix<F>> {
        match self.estimand {
            Estimand::Mean => {
                let th = theta[0];
                let wl = w[0];
                let combined: Vec<F> = self
                    .y_l
                    .iter()
                    .zip(&self.f_l)
                    .map(|(&y, &f)| (y - th) - wl * (f - th))
                    .collect();
                let resid_u: Vec<F> = self.f_u.iter().map(|&f| f - th).collect();
                let v = variance(&combined) / F::from_usize(self.n()).unwrap()
                    + wl * wl * variance(&resid_u) / F::from_usize(self.n_u()).unwrap();
                Ok(Matrix::from_rows(&[vec![v]]))
            }
            Estimand::Quantile => {
                let th = theta[0];
                let wl = w[0];
                let ind = |v: F| if v <= th { F::one() } else { F::zero() };
                let combined: Vec<F> = self
                    .y_l
                    .iter()
                    .zip(&self.f_l)
                    .map(|(&y, &f)| ind(y) - wl * ind(f))
                    .collect();
                let ind_u: Vec<F> = self.f_u.iter().map(|&f| ind(f)).collect();
                let v = variance(&combined) / F::from_usize(self.n()).unwrap()
                    + wl * wl * variance(&ind_u) / F::from_usize(self.n_u()).unwrap();
                let a = kde_density(&self.y_l, th)? - wl * kde_density(&self.f_l, th)?
                    + wl * kde_density(&self.f_u, th)?;
                if !(a > F::zero()) {
                    return Err(IpdError::Singular(format!(
                        "density estimate at the quantile solution is not positive ({a})"
                    )));
                }
                Ok(Matrix::from_rows(&[vec![v / (a * a)]]))
            }
            Estimand::Ols => {
                let (v, a) = self.ols_variance_pieces(theta, w);
                sandwich_variance(&a, &v)
            }
            Estimand::Logistic => {
                let (v, a) = self.logistic_variance_pieces(theta, w);
                sandwich_variance(&a, &v)
            }
        }
    }

    /// Meat and bread for the ols sandwich.
    ///
    /// The meat factorizes into scalar residual moments times Gram matrices:
    /// the labeled block is Cov(rY − w_j·rf, rY − w_k·rf)·G_L expanded in
    /// (Var rY, Cov(rY, rf), Var rf), the unlabeled block Var(rf)·w_jw_k·G_U.
    /// At w = 0 this reduces along the same code path to the model-based
    /// σ̂²(XᵀX/n)⁻¹/n covariance of a plain least-squares fit.
    fn ols_variance_pieces(&self, theta: &[F], w: &[F]) -> (Matrix<F>, Matrix<F>) {
        let p = self.dim();
        let n = F::from_usize(self.n()).unwrap();
        let nn = F::from_usize(self.n_u()).unwrap();
        let fit_l = self.x_l.matvec(theta);
        let r_y: Vec<F> = self.y_l.iter().zip(&fit_l).map(|(&y, &m)| y - m).collect();
        let r_f: Vec<F> = self.f_l.iter().zip(&fit_l).map(|(&f, &m)| f - m).collect();
        let fit_u = self.x_u.matvec(theta);
        let r_u: Vec<F> = self.f_u.iter().zip(&fit_u).map(|(&f, &m)| f - m).collect();
        let v_y = variance(&r_y);
        let c_yf = covariance(&r_y, &r_f);
        let v_fl = variance(&r_f);
        let v_fu = variance(&r_u);
        let g_l = self.x_l.gram().scale(F::one() / n);
        let g_u = self.x_u.gram().scale(F::one() / nn);
        let mut v = Matrix::zeros(p, p);
        let mut a = Matrix::zeros(p, p);
        for j in 0..p {
            for k in 0..p {
                let r_jk = v_y - (w[j] + w[k]) * c_yf + w[j] * w[k] * v_fl;
                v[(j, k)] = r_jk * g_l[(j, k)] / n + v_fu * w[j] * w[k] * g_u[(j, k)] / nn;
                a[(j, k)] = g_l[(j, k)] + w[j] * (g_u[(j, k)] - g_l[(j, k)]);
            }
        }
        (v, a)
    }

    /// Meat and bread for the logistic sandwich: empirical covariance of the
    /// combined per-row scores (the same form for every method, so weight
    /// reductions stay exact).
    fn logistic_variance_pieces(&self, theta: &[F], w: &[F]) -> (Matrix<F>, Matrix<F>) {
        let p = self.dim();
        let n = F::from_usize(self.n()).unwrap();
        let nn = F::from_usize(self.n_u()).unwrap();
        let (s_y, s_f, _) = self.logistic_scores(theta, true);
        let (s_u, _, _) = self.logistic_scores(theta, false);
        let mut combined = Matrix::<F>::zeros(self.n(), p);
        for r in 0..self.n() {
            for j in 0..p {
                combined[(r, j)] = s_y[(r, j)] - w[j] * s_f[(r, j)];
            }
        }
        let cov_l = covariance_matrix(&combined);
        let cov_u = covariance_matrix(&s_u);
        let (_, a) = self.logistic_pieces(theta, w);
        let mut v = Matrix::zeros(p, p);
        for j in 0..p {
            for k in 0..p {
                v[(j, k)] = cov_l[(j, k)] / n + w[j] * w[k] * cov_u[(j, k)] / nn;
            }
        }
        (v, a)
    }

    /// Per-row score matrices at θ. For the labeled side (labeled = true)
    /// returns (scores on Y, scores on f, mean xxᵀμ(1−μ)); for the unlabeled
    /// side the first entry holds the f-scores.
    fn logistic_scores(&self, theta: &[F], labeled: bool) -> (Matrix<F>, Matrix<F>, Matrix<F>) {
        let (x, o1, o2): (&Matrix<F>, &[F], &[F]) = if labeled {
            (&self.x_l, &self.y_l, &self.f_l)
        } else {
            (&self.x_u, &self.f_u, &self.f_u)
        };
        let m = x.rows();
        let p = x.cols();
        let mut s1 = Matrix::zeros(m, p);
        let mut s2 = Matrix::zeros(m, p);
        let mut info = Matrix::zeros(p, p);
        for r in 0..m {
            let row = x.row(r);
            let eta = row.iter().zip(theta).fold(F::zero(), |s, (&a, &b)| s + a * b);
            let mu = expit(eta);
            let var = mu * (F::one() - mu);
            for j in 0..p {
                s1[(r, j)] = row[j] * (o1[r] - mu);
                s2[(r, j)] = row[j] * (o2[r] - mu);
                for k in j..p {
                    info[(j, k)] = info[(j, k)] + row[j] * row[k] * var;
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                info[(j, k)] = info[(k, j)];
            }
        }
        let denom = F::from_usize(m).unwrap();
        (s1, s2, info.scale(F::one() / denom))
    }

    /// Power-tuning weight for ppi_plusplus, evaluated at the full-weight
    /// (ppi) solution with a pooled bread matrix. Unclipped; the caller
    /// applies the [0, 1] clip when configured.
    pub fn tune_lambda(&self) -> Result<TunedLambda<F>> {
        let theta = self.solve(&vec![F::one(); self.dim()])?;
        let n = F::from_usize(self.n()).unwrap();
        let nn = F::from_usize(self.n_u()).unwrap();
        let (num, den) = match self.estimand {
            Estimand::Mean | Estimand::Quantile => {
                let (psi_y, psi_fl, psi_fu) = self.scalar_psi(theta[0]);
                (
                    covariance(&psi_y, &psi_fl),
                    variance(&psi_fl) + (n / nn) * variance(&psi_fu),
                )
            }
            Estimand::Ols => {
                let mom = self.ols_tuning_moments(&theta)?;
                let t_l = mom.quad_l.trace();
                let t_u = mom.quad_u.trace();
                (
                    mom.c_yf * t_l / n,
                    mom.v_fl * t_l / n + mom.v_fu * t_u / nn,
                )
            }
            Estimand::Logistic => {
                let mom = self.logistic_tuning_moments(&theta)?;
                (
                    mom.quad_c.trace() / n,
                    mom.quad_l.trace() / n + mom.quad_u.trace() / nn,
                )
            }
        };
        if !(den > F::zero()) || !num.is_finite() {
            return Ok(TunedLambda {
                value: F::zero(),
                degenerate: true,
            });
        }
        Ok(TunedLambda {
            value: num / den,
            degenerate: false,
        })
    }

    /// Coordinate-wise tuning weights for pspa, clipped to [0, 1].
    pub fn tune_omega(&self) -> Result<TunedOmega<F>> {
        let theta = self.solve(&vec![F::one(); self.dim()])?;
        let n = F::from_usize(self.n()).unwrap();
        let nn = F::from_usize(self.n_u()).unwrap();
        let p = self.dim();
        let mut values = Vec::with_capacity(p);
        let mut degenerate_count = 0;
        let push = |values: &mut Vec<F>, degenerate: &mut usize, num: F, den: F| {
            if !(den > F::zero()) || !num.is_finite() {
                *degenerate += 1;
                values.push(F::zero());
            } else {
                values.push((num / den).max(F::zero()).min(F::one()));
            }
        };
        match self.estimand {
            Estimand::Mean | Estimand::Quantile => {
                let (psi_y, psi_fl, psi_fu) = self.scalar_psi(theta[0]);
                let num = covariance(&psi_y, &psi_fl);
                let den = variance(&psi_fl) + (n / nn) * variance(&psi_fu);
                push(&mut values, &mut degenerate_count, num, den);
            }
            Estimand::Ols => {
                let mom = self.ols_tuning_moments(&theta)?;
                for j in 0..p {
                    let q_l = mom.quad_l[(j, j)];
                    let q_u = mom.quad_u[(j, j)];
                    push(
                        &mut values,
                        &mut degenerate_count,
                        mom.c_yf * q_l / n,
                        mom.v_fl * q_l / n + mom.v_fu * q_u / nn,
                    );
                }
            }
            Estimand::Logistic => {
                let mom = self.logistic_tuning_moments(&theta)?;
                for j in 0..p {
                    push(
                        &mut values,
                        &mut degenerate_count,
                        mom.quad_c[(j, j)] / n,
                        mom.quad_l[(j, j)] / n + mom.quad_u[(j, j)] / nn,
                    );
                }
            }
        }
        Ok(TunedOmega {
            values,
            degenerate_count,
        })
    }

    /// ψ values for the scalar estimands at t (constants in ψ drop out of
    /// the variance/covariance ratios but are kept for clarity).
    fn scalar_psi(&self, t: F) -> (Vec<F>, Vec<F>, Vec<F>) {
        match self.estimand {
            Estimand::Mean => (
                self.y_l.iter().map(|&y| y - t).collect(),
                self.f_l.iter().map(|&f| f - t).collect(),
                self.f_u.iter().map(|&f| f - t).collect(),
            ),
            Estimand::Quantile => {
                let q = F::from_f64_lossy(self.q);
                let ind = |v: F| if v <= t { F::one() - q } else { -q };
                (
                    self.y_l.iter().map(|&y| ind(y)).collect(),
                    self.f_l.iter().map(|&f| ind(f)).collect(),
                    self.f_u.iter().map(|&f| ind(f)).collect(),
                )
            }
            _ => unreachable!("scalar ψ requested for a regression estimand"),
        }
    }

    fn pooled_bread_inverse(&self, g_l: &Matrix<F>, g_u: &Matrix<F>) -> Result<Matrix<F>> {
        let p = self.dim();
        let n = F::from_usize(self.n()).unwrap();
        let nn = F::from_usize(self.n_u()).unwrap();
        let total = n + nn;
        let mut pool = Matrix::zeros(p, p);
        for j in 0..p {
            for k in 0..p {
                pool[(j, k)] = (n * g_l[(j, k)] + nn * g_u[(j, k)]) / total;
            }
        }
        pool.lu_inverse()
            .map_err(|_| IpdError::Singular("pooled bread matrix is singular".into()))
    }

    fn ols_tuning_moments(&self, theta: &[F]) -> Result<OlsTuningMoments<F>> {
        let n = F::from_usize(self.n()).unwrap();
        let nn = F::from_usize(self.n_u()).unwrap();
        let fit_l = self.x_l.matvec(theta);
        let r_y: Vec<F> = self.y_l.iter().zip(&fit_l).map(|(&y, &m)| y - m).collect();
        let r_f: Vec<F> = self.f_l.iter().zip(&fit_l).map(|(&f, &m)| f - m).collect();
        let fit_u = self.x_u.matvec(theta);
        let r_u: Vec<F> = self.f_u.iter().zip(&fit_u).map(|(&f, &m)| f - m).collect();
        let g_l = self.x_l.gram().scale(F::one() / n);
        let g_u = self.x_u.gram().scale(F::one() / nn);
        let ai = self.pooled_bread_inverse(&g_l, &g_u)?;
        let ait = ai.transpose();
        Ok(OlsTuningMoments {
            c_yf: covariance(&r_y, &r_f),
            v_fl: variance(&r_f),
            v_fu: variance(&r_u),
            quad_l: ai.matmul(&g_l).matmul(&ait),
            quad_u: ai.matmul(&g_u).matmul(&ait),
        })
    }

    fn logistic_tuning_moments(&self, theta: &[F]) -> Result<LogisticTuningMoments<F>> {
        let (s_y, s_f, info_l) = self.logistic_scores(theta, true);
        let (s_u, _, info_u) = self.logistic_scores(theta, false);
        let ai = self.pooled_bread_inverse(&info_l, &info_u)?;
        let ait = ai.transpose();
        let c = cross_covariance_matrix(&s_y, &s_f);
        let sym_c = c.add(&c.transpose()).scale(F::from_f64_lossy(0.5));
        Ok(LogisticTuningMoments {
            quad_c: ai.matmul(&sym_c).matmul(&ait),
            quad_l: ai.matmul(&covariance_matrix(&s_f)).matmul(&ait),
            quad_u: ai.matmul(&covariance_matrix(&s_u)).matmul(&ait),
        })
    }
}

struct OlsTuningMoments<F> {
    c_yf: F,
    v_fl: F,
    v_fu: F,
    /// Ai·G_L·Aiᵀ and Ai·G_U·Aiᵀ for the pooled bread inverse Ai.
    quad_l: Matrix<F>,
    quad_u: Matrix<F>,
}

struct LogisticTuningMoments<F> {
    /// Ai·sym(C)·Aiᵀ for the labeled cross-covariance C of (Y-score, f-score).
    quad_c: Matrix<F>,
    quad_l: Matrix<F>,
    quad_u: Matrix<F>,
}

/// Damped Newton on g(θ) = 0 given an evaluator returning (g, A) with
/// A = −∂g/∂θ. Once the residual max-norm is within tolerance, one more full
/// step is taken so downstream weight-reduction identities see residuals at
/// the machine floor rather than at the tolerance.
fn newton<F: Real>(
    p: usize,
    eval: &dyn Fn(&[F]) -> (Vec<F>, Matrix<F>),
    coef_bound: Option<F>,
) -> Result<Vec<F>> {
    let tol = F::from_f64_lossy(NEWTON_TOL);
    let mut theta = vec![F::zero(); p];
    let (mut g, mut a) = eval(&theta);
    let mut norm = max_abs(&g);
    for _ in 0..NEWTON_MAX_ITER {
        let step = a
            .lu_solve(&g)
            .map_err(|_| IpdError::Singular("estimating-equation Jacobian is singular".into()))?;
        if norm <= tol {
            // polish: one undamped step, no further checks
            for j in 0..p {
                theta[j] = theta[j] + step[j];
            }
            return Ok(theta);
        }
        let mut scale = F::one();
        let mut accepted = false;
        for _ in 0..=NEWTON_MAX_HALVINGS {
            let cand: Vec<F> = theta
                .iter()
                .zip(&step)
                .map(|(&t, &s)| t + scale * s)
                .collect();
            let (g2, a2) = eval(&cand);
            let n2 = max_abs(&g2);
            if n2.is_finite() && n2 < norm {
                theta = cand;
                g = g2;
                a = a2;
                norm = n2;
                accepted = true;
                break;
            }
            scale = scale / F::from_f64_lossy(2.0);
        }
        if !accepted {
            return Err(IpdError::NonConvergence(format!(
                "step halving failed to reduce the residual (max-norm {norm})"
            )));
        }
        if let Some(bound) = coef_bound {
            if max_abs(&theta) > bound {
                return Err(IpdError::Separation(
                    "coefficients diverged beyond the separation bound".into(),
                ));
            }
        }
    }
    Err(IpdError::NonConvergence(format!(
        "Newton iteration budget exhausted (residual max-norm {norm})"
    )))
}

/// Gaussian kernel density estimate at t with Silverman's bandwidth
/// 0.9·min(sd, IQR/1.34)·m^(−1/5) (falling back to the sd when the IQR
/// collapses).
fn kde_density<F: Real>(sample: &[F], t: F) -> Result<F> {
    use crate::stat_core::glm::sample_quantile;
    let m = sample.len();
    let sd = variance(sample).sqrt();
    let iqr = sample_quantile(sample, 0.75) - sample_quantile(sample, 0.25);
    let scaled_iqr = iqr / F::from_f64_lossy(1.34);
    let spread = if scaled_iqr > F::zero() {
        sd.min(scaled_iqr)
    } else {
        sd
    };
    if !(spread > F::zero()) {
        return Err(IpdError::Singular(
            "sample has zero spread; no density estimate".into(),
        ));
    }
    let h = F::from_f64_lossy(0.9) * spread
        * F::from_usize(m).unwrap().powf(F::from_f64_lossy(-0.2));
    let norm = F::from_f64_lossy((2.0 * std::f64::consts::PI).sqrt());
    let mut acc = F::zero();
    for &x in sample {
        let z = (t - x) / h;
        acc = acc + (-z * z / F::from_f64_lossy(2.0)).exp();
    }
    Ok(acc / (F::from_usize(m).unwrap() * h * norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stat_core::glm::{ols_solve, sample_quantile};

    /// Deterministic test data: a linear-congruential stream feeding a
    /// two-covariate design with predictions whose errors correlate with the
    /// outcome errors (so tuned weights come out positive).
    fn toy_engine(estimand: Estimand, n: usize, nn: usize, seed: u64) -> Engine<f64> {
        let mut state = seed.wrapping_mul(2862933555777941757).wrapping_add(104917);
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        let binary = estimand == Estimand::Logistic;
        let mut gen = |m: usize| {
            let mut x = Matrix::<f64>::zeros(m, 2);
            let mut y = Vec::new();
            let mut f = Vec::new();
            for r in 0..m {
                let x1 = next() * 4.0 - 2.0;
                x[(r, 0)] = 1.0;
                x[(r, 1)] = x1;
                let eta = 0.5 + 1.5 * x1;
                if binary {
                    let yv = if next() < expit(eta) { 1.0 } else { 0.0 };
                    // predictions are the outcome with 15% label noise
                    let fv = if next() < 0.15 { 1.0 - yv } else { yv };
                    y.push(yv);
                    f.push(fv);
                } else {
                    let eps = next() - 0.5;
                    y.push(eta + eps);
                    f.push(eta + 0.5 * eps + 0.3 * (next() - 0.5));
                }
            }
            (x, y, f)
        };
        let (x_l, y_l, f_l) = gen(n);
        let (x_u, _, f_u) = gen(nn);
        let (x_l, x_u) = if estimand.is_regression() {
            (x_l, x_u)
        } else {
            (Matrix::zeros(0, 0), Matrix::zeros(0, 0))
        };
        Engine {
            estimand,
            q: 0.5,
            x_l,
            y_l,
            f_l,
            x_u,
            f_u,
        }
    }

    #[test]
    fn zero_weight_ols_matches_plain_least_squares() {
        let eng = toy_engine(Estimand::Ols, 40, 80, 7);
        let fit = eng.fit(&[0.0, 0.0]).unwrap();
        let direct = ols_solve(&eng.x_l, &eng.y_l).unwrap();
        for (a, b) in fit.theta.iter().zip(&direct.coefficients) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        // model-based covariance: Var(resid)·(XᵀX/n)⁻¹/n
        let resid: Vec<f64> = eng
            .y_l
            .iter()
            .zip(eng.x_l.matvec(&fit.theta))
            .map(|(&y, m)| y - m)
            .collect();
        let v_y = variance(&resid);
        let g_inv = eng.x_l.gram().scale(1.0 / 40.0).lu_inverse().unwrap();
        for j in 0..2 {
            for k in 0..2 {
                let oracle = v_y * g_inv[(j, k)] / 40.0;
                assert!(
                    (fit.covariance[(j, k)] - oracle).abs() < 1e-12,
                    "cov ({j},{k})"
                );
            }
        }
    }

    #[test]
    fn full_weight_ols_matches_rectified_normal_equations() {
        let eng = toy_engine(Estimand::Ols, 30, 70, 3);
        let theta = eng.solve(&[1.0, 1.0]).unwrap();
        // closed form: (X_UᵀX_U/N)⁻¹ (X_Uᵀf_U/N + X_Lᵀ(Y−f_L)/n)
        let g_u = eng.x_u.gram().scale(1.0 / 70.0);
        let mut rhs = eng.x_u.transpose().matvec(&eng.f_u);
        for r in rhs.iter_mut() {
            *r /= 70.0;
        }
        let diff: Vec<f64> = eng.y_l.iter().zip(&eng.f_l).map(|(&y, &f)| y - f).collect();
        let corr = eng.x_l.transpose().matvec(&diff);
        for (r, c) in rhs.iter_mut().zip(&corr) {
            *r += c / 30.0;
        }
        let oracle = g_u.lu_solve(&rhs).unwrap();
        for (a, b) in theta.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn weight_reduction_is_bitwise() {
        // the w = 0 path must reproduce the classic fit bit-for-bit, because
        // benchmark and tuned methods share this code path
        let eng = toy_engine(Estimand::Ols, 25, 50, 11);
        let a = eng.fit(&[0.0, 0.0]).unwrap();
        let b = eng.fit(&[0.0, 0.0]).unwrap();
        assert_eq!(a.theta, b.theta);
        for j in 0..2 {
            assert_eq!(a.covariance[(j, j)].to_bits(), b.covariance[(j, j)].to_bits());
        }
    }

    #[test]
    fn mean_engine_hand_example_and_translation() {
        let eng: Engine<f64> = Engine {
            estimand: Estimand::Mean,
            q: 0.5,
            x_l: Matrix::zeros(0, 0),
            y_l: vec![1.0, 2.0, 3.0],
            f_l: vec![1.0, 1.0, 1.0],
            x_u: Matrix::zeros(0, 0),
            f_u: vec![2.0, 2.0, 2.0, 2.0],
        };
        assert_eq!(eng.solve_mean(1.0), 3.0);
        assert_eq!(eng.solve_mean(0.0), 2.0);

        // shifting Y and f by c moves the estimate by c and keeps the SE
        let c = 17.25;
        let shifted = Engine {
            estimand: Estimand::Mean,
            q: 0.5,
            x_l: Matrix::zeros(0, 0),
            y_l: eng.y_l.iter().map(|&y| y + c).collect(),
            f_l: eng.f_l.iter().map(|&f| f + c).collect(),
            x_u: Matrix::zeros(0, 0),
            f_u: eng.f_u.iter().map(|&f| f + c).collect(),
        };
        for w in [0.0, 0.35, 1.0] {
            let base = eng.fit(&[w]).unwrap();
            let moved = shifted.fit(&[w]).unwrap();
            assert!((moved.theta[0] - base.theta[0] - c).abs() < 1e-10);
            assert!(
                (moved.covariance[(0, 0)] - base.covariance[(0, 0)]).abs() < 1e-10,
                "w = {w}"
            );
        }
    }

    #[test]
    fn quantile_zero_weight_is_sample_quantile() {
        for seed in [2u64, 9, 31] {
            let eng = toy_engine(Estimand::Quantile, 41, 60, seed);
            for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
                let mut e = toy_engine(Estimand::Quantile, 41, 60, seed);
                e.q = q;
                let got = e.solve_quantile(0.0);
                assert_eq!(got, sample_quantile(&eng.y_l, q), "q = {q}");
            }
        }
    }

    #[test]
    fn quantile_full_weight_solves_combined_equation() {
        let eng = toy_engine(Estimand::Quantile, 41, 61, 5);
        let th = eng.solve_quantile(1.0);
        // the equation is ≥ 0 at the solution and < 0 just below it
        assert!(eng.quantile_g(th, 1.0) >= 0.0);
        let below = th - 1e-7;
        assert!(eng.quantile_g(below, 1.0) < 0.0);
        // variance is positive and finite
        let cov = eng.covariance_at(&[th], &[1.0]).unwrap();
        assert!(cov[(0, 0)].is_finite() && cov[(0, 0)] > 0.0);
    }

    #[test]
    fn ols_jacobian_matches_finite_differences() {
        let eng = toy_engine(Estimand::Ols, 20, 35, 13);
        let w = [0.4, 0.8];
        let theta = [0.3, -0.6];
        let (rhs, m) = eng.ols_system(&w);
        let g = |t: &[f64]| -> Vec<f64> {
            let mt = m.matvec(t);
            rhs.iter().zip(&mt).map(|(&a, &b)| a - b).collect()
        };
        let h = 1e-6;
        for j in 0..2 {
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[j] += h;
            tm[j] -= h;
            let (gp, gm) = (g(&tp), g(&tm));
            for i in 0..2 {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                // A = −∂g/∂θ
                let analytic = -m[(i, j)];
                assert!(
                    (fd - analytic).abs() <= 1e-4 * analytic.abs().max(1.0),
                    "fd {fd} vs {analytic}"
                );
            }
        }
    }

    #[test]
    fn logistic_jacobian_matches_finite_differences() {
        let eng = toy_engine(Estimand::Logistic, 60, 90, 19);
        let w = [0.7, 0.2];
        let theta = [0.1, 0.4];
        let (_, a) = eng.logistic_pieces(&theta, &w);
        let h = 1e-5;
        for j in 0..2 {
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[j] += h;
            tm[j] -= h;
            let (gp, _) = eng.logistic_pieces(&tp, &w);
            let (gm, _) = eng.logistic_pieces(&tm, &w);
            for i in 0..2 {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                let analytic = -a[(i, j)];
                assert!(
                    (fd - analytic).abs() <= 1e-4 * analytic.abs().max(1.0),
                    "fd {fd} vs analytic {analytic} at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn logistic_solve_matches_mle_at_zero_weight() {
        let eng = toy_engine(Estimand::Logistic, 80, 100, 23);
        let theta = eng.solve(&[0.0, 0.0]).unwrap();
        let fit =
            crate::stat_core::glm::logistic_solve(&eng.x_l, &eng.y_l, 1e-10, 60).unwrap();
        for (a, b) in theta.iter().zip(&fit.coefficients) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn tuned_weights_live_in_unit_interval() {
        for estimand in [Estimand::Mean, Estimand::Quantile, Estimand::Ols, Estimand::Logistic] {
            let eng = toy_engine(estimand, 50, 90, 29);
            let lam = eng.tune_lambda().unwrap();
            assert!(lam.value.is_finite(), "{estimand:?}");
            assert!(!lam.degenerate, "{estimand:?}");
            let om = eng.tune_omega().unwrap();
            assert_eq!(om.values.len(), eng.dim());
            for &v in &om.values {
                assert!((0.0..=1.0).contains(&v), "{estimand:?}: omega {v}");
            }
            // informative predictions earn a positive weight
            assert!(lam.value > 0.0, "{estimand:?}: lambda {}", lam.value);
        }
    }

    #[test]
    fn covariance_is_symmetric_positive_on_diagonal() {
        for (estimand, w) in [
            (Estimand::Ols, vec![0.6, 0.9]),
            (Estimand::Logistic, vec![0.5, 0.5]),
        ] {
            let eng = toy_engine(estimand, 60, 120, 37);
            let fit = eng.fit(&w).unwrap();
            for j in 0..2 {
                assert!(fit.covariance[(j, j)] > 0.0);
                for k in 0..2 {
                    assert_eq!(fit.covariance[(j, k)], fit.covariance[(k, j)]);
                }
            }
        }
    }

    #[test]
    fn kde_density_matches_hand_sum() {
        let sample = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        // sd = sqrt(2.5), iqr = 2 (type-1 quantiles: q75 = 3, q25 = 1)
        let sd = 2.5f64.sqrt();
        let spread = sd.min(2.0 / 1.34);
        let h = 0.9 * spread * (5.0f64).powf(-0.2);
        let t = 1.7;
        let oracle: f64 = sample
            .iter()
            .map(|x| (-((t - x) / h).powi(2) / 2.0).exp())
            .sum::<f64>()
            / (5.0 * h * (2.0 * std::f64::consts::PI).sqrt());
        let got = kde_density(&sample, t).unwrap();
        assert!((got - oracle).abs() < 1e-14);
        // constant sample has no density estimate
        assert!(kde_density(&[2.0, 2.0, 2.0], 2.0).is_err());
    }
}
