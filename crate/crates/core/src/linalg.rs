//! Dense linear-algebra helpers shared by the exact and variational models.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative jitter always added to a covariance diagonal before factorization.
pub const BASE_JITTER: f64 = 1e-10;
/// Largest relative jitter tried before giving up.
pub const MAX_JITTER: f64 = 1e-4;

/// Lower Cholesky factor of `K + jitter * I`.
#[derive(Debug, Clone)]
pub struct Factor {
    pub l: DMatrix<f64>,
    pub jitter: f64,
}

impl Factor {
    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.l
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.l
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    /// Solves `L^T x = b`.
    pub fn solve_upper(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.l
            .tr_solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn solve_upper_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.l
            .tr_solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    /// Solves `(L L^T) x = b`.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.solve_upper_vec(&self.solve_lower_vec(b))
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// Explicit inverse of `L L^T`; used for trace terms of likelihood gradients.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.l.nrows();
        self.solve(&DMatrix::identity(n, n))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Factorizes `k` after adding `1e-10 * scale` to its diagonal, escalating the
/// jitter by 10x up to `1e-4 * scale` when the factorization fails.
///
/// `params` is only carried into the error for diagnostics.
pub fn jittered_cholesky(k: &DMatrix<f64>, scale: f64, params: &[f64]) -> Result<Factor> {
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            message: "non-finite covariance entry".into(),
            params: params.to_vec(),
        });
    }
    let scale = if scale.is_finite() && scale > 0.0 { scale } else { 1.0 };
    let mut rel = BASE_JITTER;
    while rel <= MAX_JITTER * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            let l = c.unpack();
            if l.diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok(Factor { l, jitter });
            }
        }
        rel *= 10.0;
    }
    Err(Error::Numerical {
        message: format!(
            "cholesky failed with jitter up to {:e} (n = {})",
            MAX_JITTER * scale,
            k.nrows()
        ),
        params: params.to_vec(),
    })
}

/// Reverse-mode step through `L = chol(A)`.
///
/// Given the adjoint of the lower factor, returns the symmetric adjoint of `A`
/// such that `dF = <A_bar, dA>` for symmetric perturbations `dA`.
pub fn cholesky_backward(factor: &Factor, l_bar: &DMatrix<f64>) -> DMatrix<f64> {
    let l = &factor.l;
    let n = l.nrows();
    // P = Phi(L^T L_bar): lower triangle with halved diagonal.
    let mut p = l.transpose() * l_bar.lower_triangle();
    for i in 0..n {
        for j in (i + 1)..n {
            p[(i, j)] = 0.0;
        }
        p[(i, i)] *= 0.5;
    }
    // L^{-T} P L^{-1}
    let y = factor.solve_upper(&p);
    let x = factor.solve_upper(&y.transpose()).transpose();
    (&x + x.transpose()) * 0.5
}

/// Sum of the elementwise product of two equally-shaped matrices.
pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
