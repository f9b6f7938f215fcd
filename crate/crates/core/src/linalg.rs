//! Dense Gaussian elimination with row partial pivoting.

use thiserror::Error;

use crate::dsa::DsaError;
use crate::scalar::Arithmetic;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not square: {rows} rows, row {row} has {cols} entries")]
    NotSquare { rows: usize, row: usize, cols: usize },
    #[error("right-hand side has {rhs} entries for a {rows}x{rows} matrix")]
    DimensionMismatch { rows: usize, rhs: usize },
    #[error("singular matrix: negligible pivot in column {column}")]
    SingularMatrix { column: usize },
    #[error(transparent)]
    Arithmetic(#[from] DsaError),
}

/// Square system `A V = F`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSystem<T> {
    pub matrix: Vec<Vec<T>>,
    pub rhs: Vec<T>,
}

impl<T> DenseSystem<T> {
    pub fn new(matrix: Vec<Vec<T>>, rhs: Vec<T>) -> Result<Self, LinalgError> {
        let rows = matrix.len();
        if let Some((row, r)) = matrix.iter().enumerate().find(|(_, r)| r.len() != rows) {
            return Err(LinalgError::NotSquare {
                rows,
                row,
                cols: r.len(),
            });
        }
        if rhs.len() != rows {
            return Err(LinalgError::DimensionMismatch { rows, rhs: rhs.len() });
        }
        Ok(Self { matrix, rhs })
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }
}

impl DenseSystem<f64> {
    pub fn norm_inf(&self) -> f64 {
        norm_inf(&self.matrix)
    }

    /// `A v - F`
    pub fn residual(&self, v: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .zip(&self.rhs)
            .map(|(row, f)| row.iter().zip(v).map(|(a, x)| a * x).sum::<f64>() - f)
            .collect()
    }
}

pub fn norm_inf(m: &[Vec<f64>]) -> f64 {
    m.iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves the system by LU factorisation with row partial pivoting.
///
/// Pivots are chosen by the magnitude of their point estimate. A pivot the
/// back end reports as negligible, relative to the largest entry of its
/// column in the original matrix, aborts the solve with `SingularMatrix`.
/// Taylor-coefficient columns shrink like `h^j / j!`, so a single
/// matrix-wide scale would flag well-posed systems.
pub fn lu_solve<A: Arithmetic>(ar: &mut A, sys: DenseSystem<A::Value>) -> Result<Vec<A::Value>, LinalgError> {
    ar.locate("lu_solve");
    let n = sys.dim();
    let DenseSystem { mut matrix, mut rhs } = sys;
    let estimates: Vec<Vec<f64>> = matrix
        .iter()
        .map(|r| r.iter().map(|x| ar.approx(x)).collect())
        .collect();
    let column_scale: Vec<f64> = (0..n)
        .map(|k| estimates.iter().map(|r| r[k].abs()).fold(0.0, f64::max))
        .collect();

    for k in 0..n {
        let pivot_row = (k..n)
            .max_by(|&i, &j| {
                ar.approx(&matrix[i][k])
                    .abs()
                    .total_cmp(&ar.approx(&matrix[j][k]).abs())
            })
            .expect("non-empty pivot range");
        if pivot_row != k {
            matrix.swap(pivot_row, k);
            rhs.swap(pivot_row, k);
        }
        let pivot = matrix[k][k].clone();
        if ar.is_negligible_pivot(&pivot, column_scale[k]) {
            return Err(LinalgError::SingularMatrix { column: k });
        }
        for i in (k + 1)..n {
            let factor = ar.div(&matrix[i][k], &pivot)?;
            for j in (k + 1)..n {
                let t = ar.mul(&factor, &matrix[k][j])?;
                matrix[i][j] = ar.sub(&matrix[i][j], &t)?;
            }
            let t = ar.mul(&factor, &rhs[k])?;
            rhs[i] = ar.sub(&rhs[i], &t)?;
            matrix[i][k] = ar.constant(0.0);
        }
    }

    let mut x: Vec<A::Value> = vec![ar.constant(0.0); n];
    for i in (0..n).rev() {
        let mut acc = rhs[i].clone();
        for j in (i + 1)..n {
            let t = ar.mul(&matrix[i][j], &x[j])?;
            acc = ar.sub(&acc, &t)?;
        }
        x[i] = ar.div(&acc, &matrix[i][i])?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsa::{DsaConfig, StochasticContext};
    use crate::scalar::Plain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solve(a: Vec<Vec<f64>>, f: Vec<f64>) -> Result<Vec<f64>, LinalgError> {
        lu_solve(&mut Plain, DenseSystem::new(a, f)?)
    }

    #[test]
    fn identity_returns_rhs() {
        let a = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(solve(a, vec![1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn diagonal_system() {
        let v = solve(vec![vec![2.0, 0.0], vec![0.0, 4.0]], vec![2.0, 8.0]).unwrap();
        assert_eq!(v, vec![1.0, 2.0]);
    }

    #[test]
    fn needs_pivoting() {
        let v = solve(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![3.0, 5.0]).unwrap();
        assert_eq!(v, vec![5.0, 3.0]);
    }

    #[test]
    fn singular_is_reported() {
        let err = solve(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]).unwrap_err();
        assert!(matches!(err, LinalgError::SingularMatrix { column: 1 }));
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            DenseSystem::new(vec![vec![1.0, 2.0]], vec![1.0]),
            Err(LinalgError::NotSquare { .. })
        ));
        assert!(matches!(
            DenseSystem::new(vec![vec![1.0]], vec![1.0, 2.0]),
            Err(LinalgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn random_eight_by_eight_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<Vec<f64>> = (0..8)
            .map(|i| {
                (0..8)
                    .map(|j| rng.random_range(-1.0..1.0) + if i == j { 4.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-10.0..10.0)).collect();
        let f: Vec<f64> = a.iter().map(|r| r.iter().zip(&v).map(|(x, y)| x * y).sum()).collect();
        let sys = DenseSystem::new(a, f).unwrap();
        let got = lu_solve(&mut Plain, sys.clone()).unwrap();
        let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (g, e) in got.iter().zip(&v) {
            assert!((g - e).abs() < 1e-10 * vmax);
        }
        let res = sys.residual(&got);
        let fmax = sys.rhs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let rmax = res.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(rmax <= 1e-10 * (sys.norm_inf() * vmax + fmax));
    }

    #[test]
    fn stochastic_zero_pivot_is_singular_and_logged() {
        let mut ctx = StochasticContext::new(DsaConfig::default()).unwrap();
        let a = vec![
            vec![ctx.exact(1.0), ctx.exact(2.0)],
            vec![ctx.exact(2.0), ctx.exact(4.0)],
        ];
        let f = vec![ctx.exact(1.0), ctx.exact(2.0)];
        let err = lu_solve(&mut ctx, DenseSystem::new(a, f).unwrap()).unwrap_err();
        assert!(matches!(err, LinalgError::SingularMatrix { .. }));
        assert_eq!(ctx.log().count(crate::dsa::Instability::StochasticZeroPivot), 1);
    }
}
