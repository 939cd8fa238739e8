//! Ridge-regularized normal equations for small least-squares projections.

use nalgebra::{DMatrix, SymmetricEigen};

/// Outcome of one normal-equation solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitInfo {
    /// Eigenvalue ratio of the sample-normalized Gram matrix (ridge included).
    pub condition: f64,
    pub ridge: f64,
    /// Condition exceeded the limit and the fallback ridge was applied.
    pub ill_conditioned: bool,
}

/// Factorized `G / S + ridge I`, reusable for several right-hand sides.
pub struct NormalSolver {
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    samples: f64,
    pub info: FitInfo,
}

impl NormalSolver {
    /// `gram` is the full `p x p` matrix of raw sums `A^T A`.
    pub fn new(gram: &[f64], p: usize, samples: usize, ridge: f64, condition_limit: f64) -> Self {
        let s = samples.max(1) as f64;
        let base = DMatrix::from_row_slice(p, p, gram) / s;
        let with_ridge = |lambda: f64| {
            let mut m = base.clone();
            for i in 0..p {
                m[(i, i)] += lambda;
            }
            m
        };
        let condition_of = |m: &DMatrix<f64>| {
            let eig = SymmetricEigen::new(m.clone()).eigenvalues;
            let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            if min > 0.0 {
                max / min
            } else {
                f64::INFINITY
            }
        };
        let mut lambda = ridge;
        let mut m = with_ridge(lambda);
        let mut condition = condition_of(&m);
        let mut ill = false;
        if condition > condition_limit {
            ill = true;
            let trace: f64 = (0..p).map(|i| base[(i, i)]).sum();
            lambda = ridge.max(1e-6 * trace / p as f64);
            m = with_ridge(lambda);
            condition = condition_of(&m);
        }
        let factor = match m.clone().cholesky() {
            Some(f) => f,
            None => {
                // Numerically indefinite: lift the spectrum until it factors.
                ill = true;
                let mut lift = lambda.max(1e-12);
                loop {
                    lift *= 10.0;
                    if let Some(f) = with_ridge(lift).cholesky() {
                        lambda = lift;
                        break f;
                    }
                }
            }
        };
        Self {
            factor,
            samples: s,
            info: FitInfo {
                condition,
                ridge: lambda,
                ill_conditioned: ill,
            },
        }
    }

    /// Solves for `p x r` coefficients given raw sums `A^T b` (row-major).
    pub fn solve(&self, rhs: &[f64], p: usize, r: usize) -> Vec<f64> {
        let b = DMatrix::from_row_slice(p, r, rhs) / self.samples;
        let x = self.factor.solve(&b);
        let mut out = vec![0.0; p * r];
        for i in 0..p {
            for j in 0..r {
                out[i * r + j] = x[(i, j)];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_affine_fit() {
        // y = 2 + 3x on x = 0..4
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let mut gram = [0.0; 4];
        let mut rhs = [0.0; 2];
        for &x in &xs {
            let f = [1.0, x];
            let y = 2.0 + 3.0 * x;
            for i in 0..2 {
                rhs[i] += f[i] * y;
                for j in 0..2 {
                    gram[i * 2 + j] += f[i] * f[j];
                }
            }
        }
        let s = NormalSolver::new(&gram, 2, xs.len(), 1e-12, 1e10);
        let c = s.solve(&rhs, 2, 1);
        assert!((c[0] - 2.0).abs() < 1e-9 && (c[1] - 3.0).abs() < 1e-9);
        assert!(!s.info.ill_conditioned);
    }

    #[test]
    fn degenerate_column_triggers_fallback() {
        // Second feature identically zero.
        let gram = [4.0, 0.0, 0.0, 0.0];
        let s = NormalSolver::new(&gram, 2, 4, 1e-14, 1e10);
        assert!(s.info.ill_conditioned);
        let c = s.solve(&[8.0, 0.0], 2, 1);
        assert!((c[0] - 2.0).abs() < 1e-5);
        assert_eq!(c[1], 0.0);
    }
}
