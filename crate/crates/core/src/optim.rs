//! Bounded multi-start BFGS and Adam.
//!
//! Bounds are handled by optimizing an unconstrained `z` with
//! `p = lo + (hi - lo) * sigmoid(z)`, so every iterate stays strictly inside
//! the box and the objective only ever sees admissible parameters.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::ParamBound;
use crate::doe::lhs_unit;
use crate::error::{Error, Result};
use crate::kernels::{logit, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when the gradient infinity-norm in the unconstrained space drops below this.
    pub grad_tol: f64,
    pub seed: u64,
    /// Standardize inputs to `[0, 1]^d` and outputs to zero mean, unit variance.
    pub standardize: bool,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self { restarts: 10, max_iter: 200, grad_tol: 1e-6, seed: 0, standardize: true }
    }
}

impl OptConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }
}

/// Outcome of a bounded minimization.
#[derive(Debug, Clone)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub f: f64,
    /// Objective at every accepted iterate of the winning restart.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// One line per restart that failed.
    pub diagnostics: Vec<String>,
}

struct BoxMap<'a> {
    bounds: &'a [ParamBound],
}

impl BoxMap<'_> {
    fn to_p(&self, z: &DVector<f64>) -> Vec<f64> {
        self.bounds
            .iter()
            .zip(z.iter())
            .map(|(b, &z)| if b.upper > b.lower { b.lower + (b.upper - b.lower) * sigmoid(z) } else { b.lower })
            .collect()
    }

    fn to_z(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            p.len(),
            self.bounds.iter().zip(p).map(|(b, &p)| {
                if b.upper > b.lower {
                    let u = ((p - b.lower) / (b.upper - b.lower)).clamp(1e-9, 1.0 - 1e-9);
                    logit(u)
                } else {
                    0.0
                }
            }),
        )
    }

    fn chain(&self, z: &DVector<f64>, gp: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            gp.len(),
            self.bounds.iter().zip(z.iter()).zip(gp).map(|((b, &z), &g)| {
                let s = sigmoid(z);
                g * (b.upper - b.lower) * s * (1.0 - s)
            }),
        )
    }
}

/// Minimizes `f` inside `bounds` starting at `x0` with BFGS and a backtracking
/// Armijo line search. Objective failures during the line search are treated as
/// `+inf` and shrink the step.
pub fn bfgs<F>(f: &F, bounds: &[ParamBound], x0: &[f64], max_iter: usize, grad_tol: f64) -> Result<OptResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let map = BoxMap { bounds };
    let n = x0.len();
    let mut z = map.to_z(x0);
    let eval = |z: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let p = map.to_p(z);
        let (v, g) = f(&p)?;
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical { message: "non-finite objective".into(), params: p });
        }
        Ok((v, map.chain(z, &g)))
    };
    let (mut fz, mut g) = eval(&z)?;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut trace = vec![fz];
    let mut iterations = 0;
    let mut stalls = 0;
    while iterations < max_iter && g.amax() > grad_tol {
        iterations += 1;
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            d = -g.clone();
            slope = -g.norm_squared();
        }
        // cap the first trial step in z-space
        let dn = d.amax();
        let mut step = if dn > 5.0 { 5.0 / dn } else { 1.0 };
        let mut accepted = None;
        for _ in 0..40 {
            let zt = &z + &d * step;
            if let Ok((ft, gt)) = eval(&zt) {
                if ft <= fz + 1e-4 * step * slope {
                    accepted = Some((zt, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((zn, fnew, gn)) = accepted else { break };
        let s = &zn - &z;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            let rho = 1.0 / sy;
            if iterations == 1 {
                h = DMatrix::identity(n, n) * (sy / y.norm_squared());
            }
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 yHy + rho) s s'
            h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h += &s * s.transpose() * (rho * rho * yhy + rho);
        }
        let improvement = fz - fnew;
        z = zn;
        fz = fnew;
        g = gn;
        trace.push(fz);
        if improvement <= 1e-12 * (1.0 + fz.abs()) {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    Ok(OptResult { x: map.to_p(&z), f: fz, trace, iterations, diagnostics: Vec::new() })
}

/// Runs BFGS from every point in `extra_starts` and from `opt.restarts` points of a
/// Latin hypercube over the initialization ranges, returning the best result.
///
/// The hypercube has at least 10 rows and restart `i` always uses row `i`, so a
/// run with more restarts explores a superset of the starts of a run with fewer.
pub fn multi_start<F>(f: &F, bounds: &[ParamBound], opt: &OptConfig, extra_starts: &[Vec<f64>]) -> Result<OptResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let rows = opt.restarts.max(10);
    let unit = lhs_unit(rows, bounds.len(), &mut rng);
    let mut starts: Vec<Vec<f64>> = extra_starts.to_vec();
    for i in 0..opt.restarts {
        starts.push(
            bounds
                .iter()
                .enumerate()
                .map(|(j, b)| b.init_lower + (b.init_upper - b.init_lower) * unit[(i, j)])
                .collect(),
        );
    }
    let mut best: Option<OptResult> = None;
    let mut diagnostics = Vec::new();
    for (i, x0) in starts.iter().enumerate() {
        match bfgs(f, bounds, x0, opt.max_iter, opt.grad_tol) {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.f < b.f) {
                    best = Some(r);
                }
            }
            Err(e) => diagnostics.push(format!("restart {i}: {e}")),
        }
    }
    match best {
        Some(mut b) => {
            b.diagnostics = diagnostics;
            Ok(b)
        }
        None => Err(Error::Training { diagnostics }),
    }
}

/// Adam with a piecewise-constant learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One descent step on `x` given the gradient of the objective to minimize.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            x[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}
