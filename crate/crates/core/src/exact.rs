//! Exact Gaussian-process likelihood and conditioning for any [`Covariance`].
//!
//! Flat parameter layout: `[covariance..., log_noise per noise group..., beta...]`
//! where `beta` are the coefficients of a linear mean `H beta`.

use nalgebra::{DMatrix, DVector};

use crate::covariance::{Covariance, ParamBound};
use crate::error::{contract, Result};
use crate::kernels::{log_noise_floor, LOG_BOUND};
use crate::linalg::{frobenius_dot, jittered_cholesky, Factor};
use crate::optim::{multi_start, OptConfig, OptResult};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn default_noise_bound() -> ParamBound {
    ParamBound::with_init(log_noise_floor(), 10f64.ln(), 1e-8f64.ln(), 1e-2f64.ln())
}

pub fn default_mean_bound() -> ParamBound {
    ParamBound::with_init(-10.0, 10.0, -1.0, 1.0)
}

/// Training data and mean basis of an exact GP over a given covariance.
pub struct ExactProblem<'a, C: Covariance> {
    pub cov: &'a C,
    pub x: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
    /// Mean basis, one row per training point.
    pub h: &'a DMatrix<f64>,
    pub noise_bound: ParamBound,
    /// One bound per column of `h`.
    pub mean_bounds: Vec<ParamBound>,
}

impl<'a, C: Covariance> ExactProblem<'a, C> {
    /// Constant-free problem with default noise and mean bounds.
    pub fn new(cov: &'a C, x: &'a DMatrix<f64>, y: &'a DVector<f64>, h: &'a DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(contract("at least one training point is required"));
        }
        if x.nrows() != y.len() || h.nrows() != y.len() {
            return Err(contract(format!(
                "row mismatch: X has {}, y has {}, mean basis has {}",
                x.nrows(),
                y.len(),
                h.nrows()
            )));
        }
        if x.ncols() != cov.n_cols() {
            return Err(contract(format!("X has {} columns, covariance expects {}", x.ncols(), cov.n_cols())));
        }
        Ok(Self {
            cov,
            x,
            y,
            h,
            noise_bound: default_noise_bound(),
            mean_bounds: vec![default_mean_bound(); h.ncols()],
        })
    }

    pub fn n_params(&self) -> usize {
        self.cov.n_params() + self.cov.noise_groups() + self.h.ncols()
    }

    pub fn bounds(&self) -> Vec<ParamBound> {
        let mut b = self.cov.bounds();
        b.extend(std::iter::repeat_n(self.noise_bound, self.cov.noise_groups()));
        b.extend(self.mean_bounds.iter().copied());
        b
    }

    fn split<'p>(&self, p: &'p [f64]) -> (&'p [f64], &'p [f64], &'p [f64]) {
        let nc = self.cov.n_params();
        let ng = self.cov.noise_groups();
        (&p[..nc], &p[nc..nc + ng], &p[nc + ng..])
    }

    fn noise_rows(&self, log_noise: &[f64]) -> DVector<f64> {
        let floor = log_noise_floor();
        DVector::from_fn(self.x.nrows(), |i, _| log_noise[self.cov.noise_group(self.x, i)].max(floor).exp())
    }

    fn factorize(&self, p: &[f64]) -> Result<(Factor, DVector<f64>, DVector<f64>)> {
        if p.len() != self.n_params() {
            return Err(contract(format!("expected {} parameters, got {}", self.n_params(), p.len())));
        }
        let (pc, pn, pb) = self.split(p);
        let mut k = self.cov.cross(pc, self.x, self.x);
        let scale = self.cov.diag(pc, self.x).max();
        let noise = self.noise_rows(pn);
        for i in 0..k.nrows() {
            k[(i, i)] += noise[i];
        }
        let factor = jittered_cholesky(&k, scale, p)?;
        let r = self.y - self.h * DVector::from_column_slice(pb);
        let alpha = factor.solve_vec(&r);
        Ok((factor, r, alpha))
    }

    /// Negative log marginal likelihood.
    pub fn value(&self, p: &[f64]) -> Result<f64> {
        let (factor, r, alpha) = self.factorize(p)?;
        Ok(0.5 * r.dot(&alpha) + 0.5 * factor.log_det() + 0.5 * r.len() as f64 * LN_2PI)
    }

    /// Negative log marginal likelihood and its gradient.
    pub fn value_grad(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (factor, r, alpha) = self.factorize(p)?;
        let n = r.len();
        let value = 0.5 * r.dot(&alpha) + 0.5 * factor.log_det() + 0.5 * n as f64 * LN_2PI;
        let (pc, pn, _) = self.split(p);
        let w = factor.inverse() - &alpha * alpha.transpose();
        let mut grad = Vec::with_capacity(p.len());
        // the jitter is proportional to the largest prior variance and moves with it
        let diag = self.cov.diag(pc, self.x);
        let imax = diag.imax();
        let jitter_rate = 0.5 * w.trace() * factor.jitter / diag[imax];
        let dgrad = self.cov.diag_grad(pc, self.x);
        for (dk, dd) in self.cov.cross_grad(pc, self.x, self.x).iter().zip(&dgrad) {
            grad.push(0.5 * frobenius_dot(&w, dk) + jitter_rate * dd[imax]);
        }
        let noise = self.noise_rows(pn);
        let mut gn = vec![0.0; pn.len()];
        for i in 0..n {
            gn[self.cov.noise_group(self.x, i)] += 0.5 * w[(i, i)] * noise[i];
        }
        // below the floor the noise is clamped, so it no longer moves the objective
        for (g, lp) in gn.iter_mut().zip(pn) {
            if *lp < log_noise_floor() {
                *g = 0.0;
            }
        }
        grad.extend(gn);
        grad.extend((-(self.h.transpose() * &alpha)).iter());
        Ok((value, grad))
    }

    /// Minimizes the NLML with multi-start BFGS; `extra_starts` are tried before
    /// the hypercube starts.
    pub fn optimize(&self, opt: &OptConfig, extra_starts: &[Vec<f64>]) -> Result<OptResult> {
        let f = |p: &[f64]| self.value_grad(p);
        multi_start(&f, &self.bounds(), opt, extra_starts)
    }
}

impl<C: Covariance + Clone> ExactProblem<'_, C> {
    /// Posterior conditioned on the training data at parameters `p`.
    pub fn condition(&self, p: &[f64]) -> Result<ExactPosterior<C>> {
        let (factor, r, alpha) = self.factorize(p)?;
        let nlml = 0.5 * r.dot(&alpha) + 0.5 * factor.log_det() + 0.5 * r.len() as f64 * LN_2PI;
        let (pc, pn, pb) = self.split(p);
        Ok(ExactPosterior {
            cov: self.cov.clone(),
            cov_params: pc.to_vec(),
            log_noise: pn.to_vec(),
            beta: DVector::from_column_slice(pb),
            x: self.x.clone(),
            factor,
            alpha,
            nlml,
        })
    }

    pub fn fit(&self, opt: &OptConfig, extra_starts: &[Vec<f64>]) -> Result<(ExactPosterior<C>, OptResult)> {
        let res = self.optimize(opt, extra_starts)?;
        for d in &res.diagnostics {
            log::debug!("{d}");
        }
        Ok((self.condition(&res.x)?, res))
    }
}

/// An exact GP conditioned on its training data.
#[derive(Debug, Clone)]
pub struct ExactPosterior<C> {
    pub cov: C,
    pub cov_params: Vec<f64>,
    pub log_noise: Vec<f64>,
    pub beta: DVector<f64>,
    pub x: DMatrix<f64>,
    /// Lower Cholesky factor of `K + noise` (jitter included).
    pub factor: Factor,
    /// `(K + noise)^-1 (y - H beta)`.
    pub alpha: DVector<f64>,
    pub nlml: f64,
}

impl<C: Covariance> ExactPosterior<C> {
    fn check(&self, xq: &DMatrix<f64>, hq: &DMatrix<f64>) -> Result<()> {
        if xq.ncols() != self.x.ncols() {
            return Err(contract(format!(
                "query has {} columns, model was trained on {}",
                xq.ncols(),
                self.x.ncols()
            )));
        }
        if hq.nrows() != xq.nrows() || hq.ncols() != self.beta.len() {
            return Err(contract("mean basis does not match the query"));
        }
        Ok(())
    }

    /// Latent posterior mean and variance (noise excluded) at the rows of `xq`.
    pub fn predict(&self, xq: &DMatrix<f64>, hq: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check(xq, hq)?;
        let kq = self.cov.cross(&self.cov_params, &self.x, xq);
        let mean = hq * &self.beta + kq.transpose() * &self.alpha;
        let v = self.factor.solve_lower(&kq);
        let prior = self.cov.diag(&self.cov_params, xq);
        let mut var = DVector::zeros(xq.nrows());
        for i in 0..xq.nrows() {
            var[i] = clamp_variance(prior[i] - v.column(i).norm_squared(), prior[i]);
        }
        Ok((mean, var))
    }

    /// Latent posterior mean and full covariance at the rows of `xq`.
    pub fn predict_full(&self, xq: &DMatrix<f64>, hq: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check(xq, hq)?;
        let kq = self.cov.cross(&self.cov_params, &self.x, xq);
        let mean = hq * &self.beta + kq.transpose() * &self.alpha;
        let v = self.factor.solve_lower(&kq);
        let mut c = self.cov.cross(&self.cov_params, xq, xq) - v.transpose() * v;
        let prior = self.cov.diag(&self.cov_params, xq);
        for i in 0..xq.nrows() {
            c[(i, i)] = clamp_variance(c[(i, i)], prior[i]);
        }
        Ok((mean, c))
    }

    pub fn noise(&self, group: usize) -> f64 {
        self.log_noise[group].max(log_noise_floor()).exp()
    }

    /// Flat parameter vector in the layout of [`ExactProblem`].
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.cov_params.clone();
        p.extend_from_slice(&self.log_noise);
        p.extend(self.beta.iter());
        p
    }
}

pub(crate) fn clamp_variance(v: f64, prior: f64) -> f64 {
    if v >= 0.0 {
        return v;
    }
    if -v > 1e-8 * prior.abs().max(f64::MIN_POSITIVE) {
        log::warn!("clamped negative predictive variance {v:e} (prior {prior:e})");
    } else {
        log::trace!("clamped negative predictive variance {v:e}");
    }
    0.0
}

/// Column of ones: constant mean basis.
pub fn constant_basis(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, 1, 1.0)
}

/// Bounds of log-parameters shared by most models.
pub fn log_param_bound() -> ParamBound {
    ParamBound::new(-LOG_BOUND, LOG_BOUND)
}
