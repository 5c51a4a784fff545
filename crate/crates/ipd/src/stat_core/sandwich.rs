//! Sandwich covariance assembly: A⁻¹ V A⁻ᵀ for a bread matrix A and a meat
//! matrix V, symmetrized to wash out the asymmetry that two inexact solves
//! leave behind.

use crate::error::{IpdError, Result};
use crate::stat_core::linalg::Matrix;
use crate::stat_core::Real;

pub fn sandwich_variance<F: Real>(bread: &Matrix<F>, meat: &Matrix<F>) -> Result<Matrix<F>> {
    let p = bread.rows();
    assert_eq!(bread.cols(), p, "bread must be square");
    assert_eq!(meat.rows(), p, "meat dimension mismatch");
    assert_eq!(meat.cols(), p, "meat dimension mismatch");
    let inv = bread
        .lu_inverse()
        .map_err(|_| IpdError::Singular("sandwich bread matrix is singular".into()))?;
    Ok(inv.matmul(meat).matmul(&inv.transpose()).symmetrized())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_bread_returns_meat() {
        let v = Matrix::<f64>::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]);
        let got = sandwich_variance(&Matrix::identity(2), &v).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((got[(i, j)] - v[(i, j)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn scalar_bread_scales_by_inverse_square() {
        let v = Matrix::<f64>::from_rows(&[vec![3.0]]);
        let a = Matrix::<f64>::from_rows(&[vec![2.0]]);
        let got = sandwich_variance(&a, &v).unwrap();
        assert!((got[(0, 0)] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn matches_cofactor_inverse_oracle() {
        // hand-invertible 2×2: A = [[4,1],[2,3]], det 10,
        // A⁻¹ = [[0.3,−0.1],[−0.2,0.4]]
        let a = Matrix::<f64>::from_rows(&[vec![4.0, 1.0], vec![2.0, 3.0]]);
        let v = Matrix::<f64>::from_rows(&[vec![1.0, 0.2], vec![0.2, 2.0]]);
        let ai = [[0.3, -0.1], [-0.2, 0.4]];
        let mut oracle = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        oracle[i][j] += ai[i][k] * v[(k, l)] * ai[j][l];
                    }
                }
            }
        }
        let got = sandwich_variance(&a, &v).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((got[(i, j)] - oracle[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn output_is_exactly_symmetric() {
        let a = Matrix::from_rows(&[
            vec![3.0, 0.4, -0.2],
            vec![0.1, 2.0, 0.7],
            vec![-0.5, 0.3, 4.0],
        ]);
        let v = Matrix::from_rows(&[
            vec![1.0, 0.3, 0.1],
            vec![0.3, 2.0, -0.4],
            vec![0.1, -0.4, 1.5],
        ]);
        let got = sandwich_variance(&a, &v).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(got[(i, j)], got[(j, i)]);
            }
        }
    }

    #[test]
    fn singular_bread_rejected() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        let v = Matrix::identity(2);
        assert!(matches!(
            sandwich_variance(&a, &v),
            Err(IpdError::Singular(_))
        ));
    }
}
