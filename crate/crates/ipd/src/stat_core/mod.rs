//! Deterministic numerical primitives shared by all estimation methods:
//! dense linear algebra, counter-based random streams, normal-distribution
//! inversion, regression solvers, quantiles, and sandwich covariances.
//!
//! Everything here is generic over the [`Real`] scalar so the same kernels
//! run in `f64` (the default throughout the crate) or `f32`.

pub mod glm;
pub mod linalg;
pub mod normal;
pub mod rng;
pub mod sandwich;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar abstraction for the numeric kernels.
///
/// `from_f64_lossy` never fails for finite inputs: narrowing to `f32` rounds,
/// which is the accepted cost of running the kernels in reduced precision.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Sum + Send + Sync + 'static
{
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("float conversion from f64")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float conversion to f64")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Sum + Send + Sync + 'static
{
}

/// Sample mean; zero for an empty slice.
pub fn mean<F: Real>(v: &[F]) -> F {
    if v.is_empty() {
        return F::zero();
    }
    let s: F = v.iter().copied().sum();
    s / F::from_usize(v.len()).unwrap()
}

/// Unbiased sample variance (1/(m-1) convention). Zero for m < 2.
pub fn variance<F: Real>(v: &[F]) -> F {
    if v.len() < 2 {
        return F::zero();
    }
    let m = mean(v);
    let ss: F = v.iter().map(|&x| (x - m) * (x - m)).sum();
    ss / F::from_usize(v.len() - 1).unwrap()
}

/// Unbiased sample covariance (1/(m-1) convention). Zero for m < 2.
pub fn covariance<F: Real>(a: &[F], b: &[F]) -> F {
    assert_eq!(a.len(), b.len(), "covariance of unequal-length samples");
    if a.len() < 2 {
        return F::zero();
    }
    let (ma, mb) = (mean(a), mean(b));
    let ss: F = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x - ma) * (y - mb))
        .sum();
    ss / F::from_usize(a.len() - 1).unwrap()
}

/// Column means of a row-sample matrix (each row one observation).
pub fn column_means<F: Real>(rows: &linalg::Matrix<F>) -> Vec<F> {
    let (m, p) = (rows.rows(), rows.cols());
    let mut out = vec![F::zero(); p];
    if m == 0 {
        return out;
    }
    for r in 0..m {
        for (j, o) in out.iter_mut().enumerate() {
            *o = *o + rows[(r, j)];
        }
    }
    let denom = F::from_usize(m).unwrap();
    for o in &mut out {
        *o = *o / denom;
    }
    out
}

/// Sample covariance matrix of the rows (1/(m-1) convention); zero matrix
/// for m < 2.
pub fn covariance_matrix<F: Real>(rows: &linalg::Matrix<F>) -> linalg::Matrix<F> {
    cross_covariance_matrix(rows, rows)
}

/// Sample cross-covariance Cov(a-row, b-row) between two aligned row
/// samples (1/(m-1) convention); zero matrix for m < 2.
pub fn cross_covariance_matrix<F: Real>(
    a: &linalg::Matrix<F>,
    b: &linalg::Matrix<F>,
) -> linalg::Matrix<F> {
    let m = a.rows();
    assert_eq!(m, b.rows(), "cross-covariance of unequal-length samples");
    let (pa, pb) = (a.cols(), b.cols());
    let mut out = linalg::Matrix::zeros(pa, pb);
    if m < 2 {
        return out;
    }
    let ma = column_means(a);
    let mb = column_means(b);
    for r in 0..m {
        for i in 0..pa {
            let da = a[(r, i)] - ma[i];
            for j in 0..pb {
                out[(i, j)] = out[(i, j)] + da * (b[(r, j)] - mb[j]);
            }
        }
    }
    let denom = F::from_usize(m - 1).unwrap();
    for i in 0..pa {
        for j in 0..pb {
            out[(i, j)] = out[(i, j)] / denom;
        }
    }
    out
}
