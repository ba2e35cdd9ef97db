//! Analytical two-fidelity benchmark problems.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{contract, Result};
use crate::metrics::metric_r2;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A bounded box with a cheap (LF) and an accurate (HF) function over it.
#[derive(Clone)]
pub struct BenchmarkProblem {
    pub name: String,
    pub d: usize,
    pub bounds: Vec<(f64, f64)>,
    pub lf_fn: ScalarFn,
    pub hf_fn: ScalarFn,
    pub test_set_size: usize,
}

impl fmt::Debug for BenchmarkProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BenchmarkProblem")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("bounds", &self.bounds)
            .field("test_set_size", &self.test_set_size)
            .finish_non_exhaustive()
    }
}

impl BenchmarkProblem {
    pub fn lf(&self, x: &[f64]) -> f64 {
        (self.lf_fn)(x)
    }

    pub fn hf(&self, x: &[f64]) -> f64 {
        (self.hf_fn)(x)
    }

    fn eval(&self, f: &ScalarFn, x: &DMatrix<f64>) -> DVector<f64> {
        let mut row = vec![0.0; x.ncols()];
        DVector::from_fn(x.nrows(), |i, _| {
            for (c, r) in row.iter_mut().enumerate() {
                *r = x[(i, c)];
            }
            f(&row)
        })
    }

    pub fn eval_lf(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.eval(&self.lf_fn, x)
    }

    pub fn eval_hf(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.eval(&self.hf_fn, x)
    }
}

/// One-dimensional problem whose LF/HF relationship is set by `a`:
/// `hf = sin(2 pi x)`, `lf = (x/4 - sqrt 2) sin(2 pi x + a pi)^a` on `[0, 1]`.
///
/// Odd `a` gives a linear relationship, even `a` a non-linear one.
pub fn bench_1d(a: u32) -> Result<BenchmarkProblem> {
    if !(1..=4).contains(&a) {
        return Err(contract(format!("a must be in 1..=4, got {a}")));
    }
    let af = a as f64;
    Ok(BenchmarkProblem {
        name: format!("bench_1d:a={a}"),
        d: 1,
        bounds: vec![(0.0, 1.0)],
        lf_fn: Arc::new(move |x: &[f64]| (x[0] / 4.0 - SQRT_2) * (2.0 * PI * x[0] + af * PI).sin().powi(a as i32)),
        hf_fn: Arc::new(|x: &[f64]| (2.0 * PI * x[0]).sin()),
        test_set_size: 1000,
    })
}

/// Rosenbrock-type problem of dimension `d >= 2` on `[-3, 3]^d`.
pub fn bench_vardim(d: usize) -> Result<BenchmarkProblem> {
    if d < 2 {
        return Err(contract(format!("dimension must be at least 2, got {d}")));
    }
    Ok(BenchmarkProblem {
        name: format!("bench_vardim:d={d}"),
        d,
        bounds: vec![(-3.0, 3.0); d],
        lf_fn: Arc::new(|x: &[f64]| {
            x.windows(2)
                .map(|w| 0.9 * w[1].powi(4) + 2.2 * w[0] * w[0] - 1.8 * w[0] * w[1] * w[1] + 0.5)
                .sum()
        }),
        hf_fn: Arc::new(|x: &[f64]| {
            x.windows(2).map(|w| (w[1] * w[1] - w[0]).powi(2) + (w[0] - 1.0).powi(2)).sum()
        }),
        test_set_size: 1000,
    })
}

/// Von Mises stress at the clamped end of a square-section cantilever under a tip
/// load `force` (N), with beam theory bending and average shear, no axial load.
pub fn cantilever_lf(force: f64, length: f64, d_sec: f64) -> Result<f64> {
    if !(force > 0.0 && length > 0.0 && d_sec > 0.0) {
        return Err(contract("force, length and section must be positive"));
    }
    let bending = 6.0 * force * length / d_sec.powi(3);
    let shear = force / (d_sec * d_sec);
    Ok((bending * bending + 3.0 * shear * shear).sqrt())
}

/// Agreement between the two fidelities on the points `x`, measured as the
/// coefficient of determination of the HF values used as a predictor of the LF
/// values (identity map, no regression fit). It is negative when the fidelities
/// are not linearly related on their raw scale.
pub fn fidelity_r2(problem: &BenchmarkProblem, x: &DMatrix<f64>) -> Result<f64> {
    metric_r2(&problem.eval_lf(x), &problem.eval_hf(x))
}

/// Evenly spaced grid of `n` points over a one-dimensional box.
pub fn grid_1d(n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    DMatrix::from_fn(n, 1, |i, _| lo + step * i as f64)
}
