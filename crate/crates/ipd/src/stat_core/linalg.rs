//! Minimal dense row-major matrix kernels: Householder least squares,
//! LU solve/inverse with partial pivoting, and one-sided Jacobi singular
//! values. Problem sizes here are tiny (design matrices with at most a
//! handful of columns), so clarity and determinism win over blocking.

use crate::error::{IpdError, Result};
use crate::stat_core::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    /// Build from row slices; all rows must share a length.
    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        assert!(!rows.is_empty(), "matrix needs at least one row");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix<F> {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix<F>) -> Matrix<F> {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == F::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[F]) -> Vec<F> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .fold(F::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    pub fn add(&self, other: &Matrix<F>) -> Matrix<F> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (o, &b) in out.data.iter_mut().zip(&other.data) {
            *o = *o + b;
        }
        out
    }

    pub fn scale(&self, s: F) -> Matrix<F> {
        let mut out = self.clone();
        for o in out.data.iter_mut() {
            *o = *o * s;
        }
        out
    }

    /// (M + Mᵀ)/2 — kills round-off asymmetry in covariance assembly.
    pub fn symmetrized(&self) -> Matrix<F> {
        assert_eq!(self.rows, self.cols);
        let half = F::from_f64_lossy(0.5);
        let mut out = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = (self[(i, j)] + self[(j, i)]) * half;
            }
        }
        out
    }

    /// XᵀX.
    pub fn gram(&self) -> Matrix<F> {
        let mut g = Matrix::zeros(self.cols, self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..self.cols {
                for j in i..self.cols {
                    g[(i, j)] = g[(i, j)] + row[i] * row[j];
                }
            }
        }
        for i in 0..self.cols {
            for j in 0..i {
                g[(i, j)] = g[(j, i)];
            }
        }
        g
    }

    pub fn trace(&self) -> F {
        assert_eq!(self.rows, self.cols);
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    /// Solve self·x = b by LU with partial pivoting.
    pub fn lu_solve(&self, b: &[F]) -> Result<Vec<F>> {
        let mut x = vec![F::zero(); b.len()];
        self.lu_solve_many(&[b.to_vec()], std::slice::from_mut(&mut x).as_mut())?;
        Ok(x)
    }

    fn lu_solve_many(&self, bs: &[Vec<F>], xs: &mut [Vec<F>]) -> Result<()> {
        assert_eq!(self.rows, self.cols, "lu_solve needs a square matrix");
        let n = self.rows;
        let mut lu = self.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            // partial pivot
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in (k + 1)..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == F::zero() {
                return Err(IpdError::Singular("LU pivot is exactly zero".into()));
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                for j in (k + 1)..n {
                    lu[i * n + j] = lu[i * n + j] - factor * lu[k * n + j];
                }
            }
        }
        for (b, x) in bs.iter().zip(xs.iter_mut()) {
            assert_eq!(b.len(), n);
            // forward substitution on permuted b
            let mut y: Vec<F> = perm.iter().map(|&p| b[p]).collect();
            for i in 1..n {
                for j in 0..i {
                    let l = lu[i * n + j];
                    y[i] = y[i] - l * y[j];
                }
            }
            // back substitution
            for i in (0..n).rev() {
                for j in (i + 1)..n {
                    let u = lu[i * n + j];
                    y[i] = y[i] - u * y[j];
                }
                y[i] = y[i] / lu[i * n + i];
            }
            x.clear();
            x.extend_from_slice(&y);
        }
        Ok(())
    }

    /// Matrix inverse via LU; errors on an exactly singular pivot.
    pub fn lu_inverse(&self) -> Result<Matrix<F>> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut cols_in: Vec<Vec<F>> = Vec::with_capacity(n);
        for j in 0..n {
            let mut e = vec![F::zero(); n];
            e[j] = F::one();
            cols_in.push(e);
        }
        let mut cols_out: Vec<Vec<F>> = vec![Vec::new(); n];
        self.lu_solve_many(&cols_in, &mut cols_out)?;
        let mut inv = Matrix::zeros(n, n);
        for (j, col) in cols_out.iter().enumerate() {
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Ok(inv)
    }

    /// Least squares via Householder QR: minimizes |self·β − y|₂.
    ///
    /// Requires rows ≥ cols. Rank checks live in the callers (they use
    /// `singular_values`, which gives a scale-free criterion).
    pub fn qr_least_squares(&self, y: &[F]) -> Result<Vec<F>> {
        assert_eq!(self.rows, y.len(), "qr dimension mismatch");
        assert!(self.rows >= self.cols, "qr needs rows >= cols");
        let (n, p) = (self.rows, self.cols);
        let mut a = self.data.clone();
        let mut rhs = y.to_vec();
        for k in 0..p {
            // Householder vector for column k below the diagonal
            let mut norm = F::zero();
            for i in k..n {
                let v = a[i * p + k];
                norm = norm + v * v;
            }
            norm = norm.sqrt();
            if norm == F::zero() {
                return Err(IpdError::Singular(
                    "zero column encountered in QR factorization".into(),
                ));
            }
            let akk = a[k * p + k];
            let alpha = if akk >= F::zero() { -norm } else { norm };
            let mut v = vec![F::zero(); n - k];
            v[0] = akk - alpha;
            for i in (k + 1)..n {
                v[i - k] = a[i * p + k];
            }
            let vtv = v.iter().fold(F::zero(), |s, &x| s + x * x);
            if vtv == F::zero() {
                // column already reduced
                a[k * p + k] = alpha;
                continue;
            }
            let two = F::from_f64_lossy(2.0);
            // apply H = I − 2vvᵀ/(vᵀv) to remaining columns and the rhs
            for j in k..p {
                let mut dot = F::zero();
                for i in k..n {
                    dot = dot + v[i - k] * a[i * p + j];
                }
                let beta = two * dot / vtv;
                for i in k..n {
                    a[i * p + j] = a[i * p + j] - beta * v[i - k];
                }
            }
            let mut dot = F::zero();
            for i in k..n {
                dot = dot + v[i - k] * rhs[i];
            }
            let beta = two * dot / vtv;
            for i in k..n {
                rhs[i] = rhs[i] - beta * v[i - k];
            }
        }
        // back substitution on the p×p upper triangle
        let mut beta = vec![F::zero(); p];
        for i in (0..p).rev() {
            let mut s = rhs[i];
            for j in (i + 1)..p {
                s = s - a[i * p + j] * beta[j];
            }
            let d = a[i * p + i];
            if d == F::zero() {
                return Err(IpdError::Singular("zero diagonal in R factor".into()));
            }
            beta[i] = s / d;
        }
        Ok(beta)
    }

    /// Singular values by one-sided Jacobi orthogonalization, descending.
    ///
    /// Rotates column pairs until all are mutually orthogonal to relative
    /// tolerance; the singular values are then the column norms.
    pub fn singular_values(&self) -> Vec<F> {
        let (n, p) = (self.rows, self.cols);
        let mut a = self.data.clone();
        let eps = F::from_f64_lossy(1e-14);
        let max_sweeps = 60;
        for _ in 0..max_sweeps {
            let mut off = false;
            for i in 0..p {
                for j in (i + 1)..p {
                    let mut aii = F::zero();
                    let mut ajj = F::zero();
                    let mut aij = F::zero();
                    for r in 0..n {
                        let x = a[r * p + i];
                        let y = a[r * p + j];
                        aii = aii + x * x;
                        ajj = ajj + y * y;
                        aij = aij + x * y;
                    }
                    if aij.abs() <= eps * (aii * ajj).sqrt() {
                        continue;
                    }
                    off = true;
                    // Jacobi rotation annihilating the (i,j) inner product
                    let tau = (ajj - aii) / (F::from_f64_lossy(2.0) * aij);
                    let t = {
                        let sign = if tau >= F::zero() { F::one() } else { -F::one() };
                        sign / (tau.abs() + (F::one() + tau * tau).sqrt())
                    };
                    let c = F::one() / (F::one() + t * t).sqrt();
                    let s = c * t;
                    for r in 0..n {
                        let x = a[r * p + i];
                        let y = a[r * p + j];
                        a[r * p + i] = c * x - s * y;
                        a[r * p + j] = s * x + c * y;
                    }
                }
            }
            if !off {
                break;
            }
        }
        let mut sv: Vec<F> = (0..p)
            .map(|j| {
                (0..n)
                    .map(|r| a[r * p + j] * a[r * p + j])
                    .fold(F::zero(), |x, y| x + y)
                    .sqrt()
            })
            .collect();
        sv.sort_by(|x, y| y.partial_cmp(x).expect("singular values are finite"));
        sv
    }

    /// Ratio-based rank guard: smallest singular value < tol × largest.
    pub fn is_rank_deficient(&self, tol: F) -> bool {
        let sv = self.singular_values();
        match (sv.first(), sv.last()) {
            (Some(&hi), Some(&lo)) => lo < tol * hi,
            _ => true,
        }
    }
}

impl<F> std::ops::Index<(usize, usize)> for Matrix<F> {
    type Output = F;
    fn index(&self, (r, c): (usize, usize)) -> &F {
        &self.data[r * self.cols + c]
    }
}

impl<F> std::ops::IndexMut<(usize, usize)> for Matrix<F> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut F {
        &mut self.data[r * self.cols + c]
    }
}
