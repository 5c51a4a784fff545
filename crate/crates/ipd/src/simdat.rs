//! Synthetic stacked datasets with trained predictions.
//!
//! The generator draws four standard-normal covariates per row, builds the
//! outcome `Y = effect·X1 + X2²/2 + X3³/3 + X4²/4 + ε`, trains a flexible
//! prediction model on the training rows only, and fills the `f` column with
//! that model's predictions on the labeled and unlabeled rows — predictions
//! that are informative but imperfect, which is the regime the estimators
//! are designed for.

use crate::dataset::{Label, StackedDataset};
use crate::error::{IpdError, Result};
use crate::methods::Estimand;
use crate::stat_core::glm::{expit, sample_quantile};
use crate::stat_core::linalg::Matrix;
use crate::stat_core::rng::{domains, stream_id, RngStream};
use crate::stat_core::Real;

/// Draw count for the simulation oracle of population targets.
pub const DEFAULT_TRUTH_DRAWS: usize = 10_000_000;

/// Ridge penalty of the binary prediction model (fixed; the continuous
/// model picks its penalty by generalized cross-validation).
const LOGISTIC_RIDGE: f64 = 1e-3;
const TRAINER_TOL: f64 = 1e-8;
const TRAINER_MAX_ITER: usize = 100;
const TRAINER_MAX_HALVINGS: usize = 20;

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub n_training: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    /// True coefficient on X1 (the linear-regression target).
    pub effect: f64,
    /// Outcome noise standard deviation.
    pub sigma_y: f64,
    /// Which downstream estimand the data is intended for; "logistic"
    /// switches to the binary design, everything else shares the continuous
    /// one.
    pub model: Estimand,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(seed: u64) -> Self {
        SimConfig {
            n_training: 100,
            n_labeled: 100,
            n_unlabeled: 1000,
            effect: 1.0,
            sigma_y: 4.0,
            model: Estimand::Ols,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, count) in [
            ("training", self.n_training),
            ("labeled", self.n_labeled),
            ("unlabeled", self.n_unlabeled),
        ] {
            if count < 10 {
                return Err(IpdError::Config(format!(
                    "the {name} set needs at least 10 rows, got {count}"
                )));
            }
        }
        if !(self.sigma_y > 0.0) || !self.sigma_y.is_finite() {
            return Err(IpdError::Config(format!(
                "sigma_y must be a positive number, got {}",
                self.sigma_y
            )));
        }
        if !self.effect.is_finite() {
            return Err(IpdError::Config(format!(
                "effect must be finite, got {}",
                self.effect
            )));
        }
        Ok(())
    }
}

/// The noiseless outcome surface.
fn mean_surface(effect: f64, x: &[f64; 4]) -> f64 {
    effect * x[0] + x[1] * x[1] / 2.0 + x[2] * x[2] * x[2] / 3.0 + x[3] * x[3] / 4.0
}

/// Generate a stacked dataset: rows ordered training, labeled, unlabeled;
/// label column "set" first, then Y, f, X1…X4 (and f_prob for the binary
/// design). Identical configs produce bit-identical datasets.
pub fn simdat(config: &SimConfig) -> Result<StackedDataset> {
    config.validate()?;
    let total = config.n_training + config.n_labeled + config.n_unlabeled;
    let mut x_rng = RngStream::new(config.seed, stream_id(domains::SIMDAT, 0));
    let mut eps_rng = RngStream::new(config.seed, stream_id(domains::SIMDAT, 1));
    let mut xs: Vec<[f64; 4]> = Vec::with_capacity(total);
    let mut latent = Vec::with_capacity(total);
    for _ in 0..total {
        let x = [
            x_rng.next_normal(),
            x_rng.next_normal(),
            x_rng.next_normal(),
            x_rng.next_normal(),
        ];
        let eps = config.sigma_y * eps_rng.next_normal();
        latent.push(mean_surface(config.effect, &x) + eps);
        xs.push(x);
    }

    let binary = config.model == Estimand::Logistic;
    let y: Vec<f64> = if binary {
        // threshold the latent outcome at its empirical median so the
        // classes are balanced by construction
        let cut = sample_quantile(&latent, 0.5);
        latent.iter().map(|&v| if v > cut { 1.0 } else { 0.0 }).collect()
    } else {
        latent
    };

    let model = train_prediction_model(&xs[..config.n_training], &y[..config.n_training], binary)?;

    let mut f: Vec<Option<f64>> = vec![None; total];
    let mut f_prob: Vec<Option<f64>> = vec![None; total];
    for i in config.n_training..total {
        let p = model.predict(&xs[i]);
        if binary {
            f[i] = Some(if p > 0.5 { 1.0 } else { 0.0 });
            f_prob[i] = Some(p);
        } else {
            f[i] = Some(p);
        }
    }

    let mut labels = Vec::with_capacity(total);
    labels.extend(std::iter::repeat(Label::Training).take(config.n_training));
    labels.extend(std::iter::repeat(Label::Labeled).take(config.n_labeled));
    labels.extend(std::iter::repeat(Label::Unlabeled).take(config.n_unlabeled));

    let mut names: Vec<String> = ["Y", "f", "X1", "X2", "X3", "X4"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut columns: Vec<Vec<Option<f64>>> = vec![
        y.iter().map(|&v| Some(v)).collect(),
        f,
        xs.iter().map(|x| Some(x[0])).collect(),
        xs.iter().map(|x| Some(x[1])).collect(),
        xs.iter().map(|x| Some(x[2])).collect(),
        xs.iter().map(|x| Some(x[3])).collect(),
    ];
    if binary {
        names.push("f_prob".to_string());
        columns.push(f_prob);
    }
    StackedDataset::from_parts("set", 0, names, labels, columns)
}

/// Population value of the scalar targets, by direct simulation from the
/// generator's outcome law. Regression targets need no simulation (the true
/// X1 coefficient is the `effect` parameter), so they are rejected here.
pub fn population_truth(
    model: Estimand,
    effect: f64,
    sigma_y: f64,
    q: Option<f64>,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    if model.is_regression() {
        return Err(IpdError::Unsupported(format!(
            "population truth by simulation covers \"mean\" and \"quantile\"; the {:?} target \
             is the effect parameter itself",
            model.as_str()
        )));
    }
    assert!(draws >= 2, "population oracle needs at least 2 draws");
    let mut rng = RngStream::new(seed, stream_id(domains::TRUTH, 0));
    let draw = |rng: &mut RngStream| {
        let x = [
            rng.next_normal(),
            rng.next_normal(),
            rng.next_normal(),
            rng.next_normal(),
        ];
        mean_surface(effect, &x) + sigma_y * rng.next_normal()
    };
    match model {
        Estimand::Mean => {
            let mut acc = 0.0;
            for _ in 0..draws {
                acc += draw(&mut rng);
            }
            Ok(acc / draws as f64)
        }
        Estimand::Quantile => {
            let level = q.ok_or_else(|| {
                IpdError::Config("quantile truth needs a quantile level q".into())
            })?;
            let mut sample = Vec::with_capacity(draws);
            for _ in 0..draws {
                sample.push(draw(&mut rng));
            }
            Ok(sample_quantile(&sample, level))
        }
        _ => unreachable!(),
    }
}

/// A trained prediction model on the polynomial basis
/// [X1, X2, X2², X3, X3², X3³, X4, X4²]; `predict` returns the fitted mean
/// (continuous) or the class probability (binary).
pub struct TrainedModel<F> {
    /// Intercept followed by the raw-basis coefficients.
    coef: Vec<F>,
    binary: bool,
}

fn basis_row<F: Real>(x: &[F; 4]) -> [F; 8] {
    let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
    [x1, x2, x2 * x2, x3, x3 * x3, x3 * x3 * x3, x4, x4 * x4]
}

impl<F: Real> TrainedModel<F> {
    pub fn predict(&self, x: &[F; 4]) -> F {
        let b = basis_row(x);
        let mut lin = self.coef[0];
        for (j, &v) in b.iter().enumerate() {
            lin = lin + self.coef[j + 1] * v;
        }
        if self.binary {
            expit(lin)
        } else {
            lin
        }
    }

    /// Intercept-first coefficients on the raw (unstandardized) basis.
    pub fn coefficients(&self) -> &[F] {
        &self.coef
    }
}

/// Fit the prediction model on training rows: ridge regression on the
/// standardized polynomial basis, with the penalty chosen by generalized
/// cross-validation (continuous outcomes) or fixed small (binary outcomes).
pub fn train_prediction_model<F: Real>(
    xs: &[[F; 4]],
    y: &[F],
    binary: bool,
) -> Result<TrainedModel<F>> {
    assert_eq!(xs.len(), y.len(), "covariate/outcome length mismatch");
    let m = xs.len();
    let p = 8;
    let mut raw = Matrix::<F>::zeros(m, p);
    for (r, x) in xs.iter().enumerate() {
        for (c, &v) in basis_row(x).iter().enumerate() {
            raw[(r, c)] = v;
        }
    }
    // standardize columns over the training rows
    let m_f = F::from_usize(m).unwrap();
    let mut means = vec![F::zero(); p];
    let mut sds = vec![F::zero(); p];
    for c in 0..p {
        let mut s = F::zero();
        for r in 0..m {
            s = s + raw[(r, c)];
        }
        means[c] = s / m_f;
        let mut ss = F::zero();
        for r in 0..m {
            let d = raw[(r, c)] - means[c];
            ss = ss + d * d;
        }
        sds[c] = (ss / (m_f - F::one())).sqrt();
        if !(sds[c] > F::zero()) {
            return Err(IpdError::Singular(format!(
                "basis column {c} of the prediction-model design is constant"
            )));
        }
    }
    let mut z = Matrix::<F>::zeros(m, p);
    for r in 0..m {
        for c in 0..p {
            z[(r, c)] = (raw[(r, c)] - means[c]) / sds[c];
        }
    }
    if binary {
        ridge_logistic(&z, y, &means, &sds)
    } else {
        gcv_ridge(&z, y, &means, &sds)
    }
}

/// Ridge on centered y / standardized basis; the penalty runs over the grid
/// 2^k, k = −20…20, scored by GCV(ρ) = m·RSS/(m − edf)² with
/// edf = 1 + Σ d²/(d² + ρ) from the singular values d of the design.
fn gcv_ridge<F: Real>(
    z: &Matrix<F>,
    y: &[F],
    means: &[F],
    sds: &[F],
) -> Result<TrainedModel<F>> {
    let m = z.rows();
    let p = z.cols();
    let m_f = F::from_usize(m).unwrap();
    let y_bar = y.iter().fold(F::zero(), |a, &b| a + b) / m_f;
    let yc: Vec<F> = y.iter().map(|&v| v - y_bar).collect();
    let gram = z.gram();
    let zty = z.transpose().matvec(&yc);
    let d = z.singular_values();
    let mut best: Option<(F, Vec<F>)> = None;
    for k in -20..=20 {
        let rho = F::from_f64_lossy(2f64.powi(k));
        let mut penalized = gram.clone();
        for j in 0..p {
            penalized[(j, j)] = penalized[(j, j)] + rho;
        }
        let beta = penalized.lu_solve(&zty)?;
        let fitted = z.matvec(&beta);
        let rss = yc
            .iter()
            .zip(&fitted)
            .fold(F::zero(), |s, (&a, &b)| s + (a - b) * (a - b));
        let edf = d.iter().fold(F::one(), |s, &dv| {
            let d2 = dv * dv;
            s + d2 / (d2 + rho)
        });
        let denom = m_f - edf;
        if !(denom > F::zero()) {
            continue;
        }
        let gcv = m_f * rss / (denom * denom);
        if best.as_ref().map_or(true, |(g, _)| gcv < *g) {
            best = Some((gcv, beta));
        }
    }
    let (_, beta) = best.ok_or_else(|| {
        IpdError::Singular("no ridge penalty produced a usable fit".into())
    })?;
    Ok(TrainedModel {
        coef: unstandardize(&beta, y_bar, means, sds),
        binary: false,
    })
}

/// Ridge-penalized logistic regression on [1 | standardized basis]; the
/// intercept is unpenalized. Newton with step halving on the penalized
/// score norm.
fn ridge_logistic<F: Real>(
    z: &Matrix<F>,
    y: &[F],
    means: &[F],
    sds: &[F],
) -> Result<TrainedModel<F>> {
    let m = z.rows();
    let p = z.cols() + 1; // intercept first
    let rho = F::from_f64_lossy(LOGISTIC_RIDGE);
    let tol = F::from_f64_lossy(TRAINER_TOL);
    let design_row = |r: usize| -> Vec<F> {
        let mut row = Vec::with_capacity(p);
        row.push(F::one());
        row.extend_from_slice(z.row(r));
        row
    };
    let score_and_hessian = |beta: &[F]| {
        let mut score = vec![F::zero(); p];
        let mut hess = Matrix::<F>::zeros(p, p);
        for r in 0..m {
            let row = design_row(r);
            let eta = row.iter().zip(beta).fold(F::zero(), |s, (&a, &b)| s + a * b);
            let mu = expit(eta);
            let var = mu * (F::one() - mu);
            for j in 0..p {
                score[j] = score[j] + row[j] * (y[r] - mu);
                for k in j..p {
                    hess[(j, k)] = hess[(j, k)] + row[j] * row[k] * var;
                }
            }
        }
        for j in 1..p {
            score[j] = score[j] - rho * beta[j];
            hess[(j, j)] = hess[(j, j)] + rho;
        }
        for j in 0..p {
            for k in 0..j {
                hess[(j, k)] = hess[(k, j)];
            }
        }
        (score, hess)
    };
    let max_abs = |v: &[F]| v.iter().fold(F::zero(), |a, &b| a.max(b.abs()));
    let mut beta = vec![F::zero(); p];
    let (mut score, mut hess) = score_and_hessian(&beta);
    let mut norm = max_abs(&score);
    let mut converged = false;
    for _ in 0..TRAINER_MAX_ITER {
        if norm <= tol {
            converged = true;
            break;
        }
        let step = hess.lu_solve(&score)?;
        let mut scale = F::one();
        let mut accepted = false;
        for _ in 0..=TRAINER_MAX_HALVINGS {
            let cand: Vec<F> = beta
                .iter()
                .zip(&step)
                .map(|(&b, &s)| b + scale * s)
                .collect();
            let (s2, h2) = score_and_hessian(&cand);
            let n2 = max_abs(&s2);
            if n2.is_finite() && n2 < norm {
                beta = cand;
                score = s2;
                hess = h2;
                norm = n2;
                accepted = true;
                break;
            }
            scale = scale / F::from_f64_lossy(2.0);
        }
        if !accepted {
            break;
        }
    }
    if !converged && norm > tol {
        return Err(IpdError::NonConvergence(format!(
            "binary prediction model did not converge (score max-norm {norm})"
        )));
    }
    // beta is on the standardized scale with a leading intercept
    let mut std_coef = vec![F::zero(); p - 1];
    std_coef.copy_from_slice(&beta[1..]);
    let mut coef = unstandardize(&std_coef, beta[0], means, sds);
    // unstandardize() treats its offset as a centered-response mean; for the
    // logistic link the intercept correction is identical, so reuse it
    coef[0] = beta[0]
        - std_coef
            .iter()
            .zip(means.iter().zip(sds))
            .fold(F::zero(), |s, (&b, (&mu, &sd))| s + b * mu / sd);
    Ok(TrainedModel {
        coef,
        binary: true,
    })
}

/// Map standardized-basis coefficients back to the raw basis:
/// b_j = β_j / sd_j, intercept = offset − Σ b_j·mean_j.
fn unstandardize<F: Real>(beta: &[F], offset: F, means: &[F], sds: &[F]) -> Vec<F> {
    let mut coef = Vec::with_capacity(beta.len() + 1);
    let mut intercept = offset;
    coef.push(F::zero());
    for ((&b, &mu), &sd) in beta.iter().zip(means).zip(sds) {
        let raw = b / sd;
        intercept = intercept - raw * mu;
        coef.push(raw);
    }
    coef[0] = intercept;
    coef
}
