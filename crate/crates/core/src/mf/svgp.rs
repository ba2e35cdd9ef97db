//! Sparse variational GP layer in whitened form.
//!
//! The inducing outputs are `u = Lz w` with `Lz Lz^T = K_ZZ` and
//! `q(w) = N(v, Lw Lw^T)`, so the prior on `w` is standard normal. `Lw` is lower
//! triangular with a softplus diagonal. Gradients are written out by hand in
//! reverse mode; [`SvgpLayer::forward`] and [`SvgpLayer::backward`] are the two
//! halves of one pass and can be chained through the input adjoint.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::covariance::{Covariance, InputGradient};
use crate::error::{contract, Result};
use crate::gp::Dataset;
use crate::linalg::{cholesky_backward, frobenius_dot, jittered_cholesky, Factor};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One sparse variational GP with fixed inducing inputs.
#[derive(Debug, Clone)]
pub struct SvgpLayer<C> {
    pub cov: C,
    pub kernel_params: Vec<f64>,
    /// Inducing inputs, one row per inducing point.
    pub z: DMatrix<f64>,
    /// Whitened variational mean.
    pub v: DVector<f64>,
    /// Lower triangle of the whitened variational factor; the diagonal is stored
    /// before the softplus.
    pub l_raw: DMatrix<f64>,
}

/// Quantities shared by every pass through a layer at fixed parameters.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub kzz: Factor,
    pub lw: DMatrix<f64>,
}

/// Forward values of one pass, kept for the backward step.
#[derive(Debug, Clone)]
pub struct Pass {
    pub input: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
}

/// Gradient accumulator of one layer.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub kernel: Vec<f64>,
    pub v: DVector<f64>,
    pub lw: DMatrix<f64>,
    /// Adjoint of the inducing Cholesky factor, folded into `kernel` by [`SvgpLayer::finish`].
    pub lz: DMatrix<f64>,
}

impl<C: Covariance + InputGradient> SvgpLayer<C> {
    /// Layer with `q(w) = N(0, 1e-4 I)`, i.e. `q(u)` mean zero and covariance `1e-4 K_ZZ`.
    pub fn new(cov: C, kernel_params: Vec<f64>, z: DMatrix<f64>) -> Result<Self> {
        if z.ncols() != cov.n_cols() {
            return Err(contract(format!("inducing inputs have {} columns, kernel expects {}", z.ncols(), cov.n_cols())));
        }
        if kernel_params.len() != cov.n_params() {
            return Err(contract(format!("expected {} kernel parameters, got {}", cov.n_params(), kernel_params.len())));
        }
        let m = z.nrows();
        let mut l_raw = DMatrix::zeros(m, m);
        l_raw.fill_diagonal(softplus_inv(1e-2));
        Ok(Self { cov, kernel_params, z, v: DVector::zeros(m), l_raw })
    }

    pub fn n_inducing(&self) -> usize {
        self.z.nrows()
    }

    /// Kernel parameters, variational mean and the lower triangle of the factor.
    pub fn n_params(&self) -> usize {
        let m = self.n_inducing();
        self.kernel_params.len() + m + m * (m + 1) / 2
    }

    /// Flat parameters `[kernel..., v..., lower triangle of l_raw row by row...]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.kernel_params.clone();
        p.extend(self.v.iter());
        for i in 0..self.n_inducing() {
            p.extend((0..=i).map(|j| self.l_raw[(i, j)]));
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let nk = self.kernel_params.len();
        let m = self.n_inducing();
        self.kernel_params.copy_from_slice(&p[..nk]);
        self.v.copy_from(&DVector::from_column_slice(&p[nk..nk + m]));
        let mut k = nk + m;
        for i in 0..m {
            for j in 0..=i {
                self.l_raw[(i, j)] = p[k];
                k += 1;
            }
        }
    }

    /// Flattens a gradient accumulator in the layout of [`Self::params`].
    pub fn flatten(&self, g: &LayerGrad) -> Vec<f64> {
        let mut out = g.kernel.clone();
        out.extend(g.v.iter());
        for i in 0..self.n_inducing() {
            for j in 0..i {
                out.push(g.lw[(i, j)]);
            }
            out.push(g.lw[(i, i)] * sigmoid(self.l_raw[(i, i)]));
        }
        out
    }

    /// Whitened variational factor `Lw`.
    pub fn lw(&self) -> DMatrix<f64> {
        let mut l = self.l_raw.lower_triangle();
        for i in 0..l.nrows() {
            l[(i, i)] = softplus(self.l_raw[(i, i)]);
        }
        l
    }

    /// Variational covariance of the inducing outputs, `Lz Lw Lw^T Lz^T`.
    pub fn inducing_covariance(&self) -> Result<DMatrix<f64>> {
        let prep = self.prepare()?;
        let a = &prep.kzz.l * &prep.lw;
        Ok(&a * a.transpose())
    }

    /// Variational mean of the inducing outputs, `Lz v`.
    pub fn inducing_mean(&self) -> Result<DVector<f64>> {
        Ok(&self.prepare()?.kzz.l * &self.v)
    }

    pub fn prepare(&self) -> Result<Prepared> {
        let kzz = self.cov.cross(&self.kernel_params, &self.z, &self.z);
        let scale = self.cov.diag(&self.kernel_params, &self.z).max();
        Ok(Prepared { kzz: jittered_cholesky(&kzz, scale, &self.kernel_params)?, lw: self.lw() })
    }

    pub fn zero_grad(&self) -> LayerGrad {
        let m = self.n_inducing();
        LayerGrad {
            kernel: vec![0.0; self.kernel_params.len()],
            v: DVector::zeros(m),
            lw: DMatrix::zeros(m, m),
            lz: DMatrix::zeros(m, m),
        }
    }

    /// Marginals `q(f(a_i)) = N(mean_i, var_i)` at the rows of `input`.
    pub fn forward(&self, prep: &Prepared, input: DMatrix<f64>) -> Pass {
        let kzx = self.cov.cross(&self.kernel_params, &self.z, &input);
        let b = prep.kzz.solve_lower(&kzx);
        let c = prep.lw.transpose() * &b;
        let mean = b.transpose() * &self.v;
        let kdiag = self.cov.diag(&self.kernel_params, &input);
        let var = DVector::from_fn(input.nrows(), |i, _| {
            kdiag[i] - b.column(i).norm_squared() + c.column(i).norm_squared()
        });
        Pass { input, b, c, mean, var }
    }

    /// Accumulates parameter gradients for adjoints `m_bar`, `s_bar` of the pass
    /// marginals and returns the adjoint of the pass input.
    pub fn backward(
        &self,
        prep: &Prepared,
        pass: &Pass,
        m_bar: &DVector<f64>,
        s_bar: &DVector<f64>,
        g: &mut LayerGrad,
    ) -> DMatrix<f64> {
        let b = &pass.b;
        g.v += b * m_bar;
        let mut bs = b.clone();
        let mut cs = pass.c.clone();
        for (i, s) in s_bar.iter().enumerate() {
            bs.column_mut(i).scale_mut(2.0 * s);
            cs.column_mut(i).scale_mut(2.0 * s);
        }
        // cs is the adjoint of C = Lw^T B
        let b_bar = &self.v * m_bar.transpose() - &bs + &prep.lw * &cs;
        g.lw += b * cs.transpose();
        let kzx_bar = prep.kzz.solve_upper(&b_bar);
        g.lz -= &kzx_bar * b.transpose();
        let p = &self.kernel_params;
        for (k, dk) in self.cov.cross_grad(p, &self.z, &pass.input).iter().enumerate() {
            g.kernel[k] += frobenius_dot(&kzx_bar, dk);
        }
        for (k, dd) in self.cov.diag_grad(p, &pass.input).iter().enumerate() {
            g.kernel[k] += dd.dot(s_bar);
        }
        // the prior variance of a stationary kernel does not depend on the input
        self.cov.input_grad(p, &pass.input, &self.z, &kzx_bar.transpose())
    }

    /// Folds the accumulated inducing-factor adjoint into the kernel gradient.
    pub fn finish(&self, prep: &Prepared, g: &mut LayerGrad) {
        let kzz_bar = cholesky_backward(&prep.kzz, &g.lz);
        let p = &self.kernel_params;
        let diag = self.cov.diag(p, &self.z);
        let imax = diag.imax();
        let jitter_rate = kzz_bar.trace() * prep.kzz.jitter / diag[imax];
        let dgrad = self.cov.diag_grad(p, &self.z);
        for (k, dk) in self.cov.cross_grad(p, &self.z, &self.z).iter().enumerate() {
            g.kernel[k] += frobenius_dot(&kzz_bar, dk) + jitter_rate * dgrad[k][imax];
        }
        g.lz.fill(0.0);
    }

    /// `KL(q(u) || p(u))`.
    pub fn kl(&self, prep: &Prepared) -> f64 {
        let lw = &prep.lw;
        let m = self.n_inducing() as f64;
        0.5 * (lw.norm_squared() + self.v.norm_squared() - m) - lw.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Adds `scale * d KL` to the gradient.
    pub fn kl_backward(&self, prep: &Prepared, scale: f64, g: &mut LayerGrad) {
        g.v += &self.v * scale;
        let mut dl = prep.lw.clone();
        for i in 0..dl.nrows() {
            dl[(i, i)] -= 1.0 / prep.lw[(i, i)];
        }
        g.lw += dl * scale;
    }

    /// Marginal prediction at the rows of `x`, clamped to non-negative variance.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if x.ncols() != self.z.ncols() {
            return Err(contract(format!("query has {} columns, layer expects {}", x.ncols(), self.z.ncols())));
        }
        let prep = self.prepare()?;
        let pass = self.forward(&prep, x.clone());
        Ok((pass.mean, pass.var.map(|v| v.max(0.0))))
    }
}

/// Expected Gaussian log-likelihood `E_{N(f; m, s)} log N(y | f, noise)` summed
/// over points, with its adjoints w.r.t. `m`, `s` and `ln noise`.
pub fn expected_log_lik(
    y: &DVector<f64>,
    mean: &DVector<f64>,
    var: &DVector<f64>,
    noise: f64,
) -> (f64, DVector<f64>, DVector<f64>, f64) {
    let n = y.len();
    let mut value = 0.0;
    let mut g_noise = 0.0;
    let m_bar = DVector::from_fn(n, |i, _| (y[i] - mean[i]) / noise);
    let s_bar = DVector::from_element(n, -0.5 / noise);
    for i in 0..n {
        let q = (y[i] - mean[i]).powi(2) + var[i];
        value += -0.5 * (LN_2PI + noise.ln()) - 0.5 * q / noise;
        g_noise += -0.5 + 0.5 * q / noise;
    }
    (value, m_bar, s_bar, g_noise)
}

fn check_elbo_inputs<C: Covariance>(layer: &SvgpLayer<C>, data: &Dataset) -> Result<()> {
    if data.dim() != layer.z.ncols() {
        return Err(contract(format!("data has {} columns, layer expects {}", data.dim(), layer.z.ncols())));
    }
    Ok(())
}

/// Single-layer ELBO with the expectation in closed form, and its gradient in
/// the layout `[layer params..., ln noise]`.
pub fn svgp_elbo_analytic<C: Covariance + InputGradient>(
    layer: &SvgpLayer<C>,
    data: &Dataset,
    log_noise: f64,
) -> Result<(f64, Vec<f64>)> {
    check_elbo_inputs(layer, data)?;
    let prep = layer.prepare()?;
    let pass = layer.forward(&prep, data.x.clone());
    let noise = log_noise.exp();
    let (ell, m_bar, s_bar, g_noise) = expected_log_lik(&data.y, &pass.mean, &pass.var, noise);
    let mut g = layer.zero_grad();
    layer.backward(&prep, &pass, &m_bar, &s_bar, &mut g);
    layer.kl_backward(&prep, -1.0, &mut g);
    layer.finish(&prep, &mut g);
    let mut grad = layer.flatten(&g);
    grad.push(g_noise);
    Ok((ell - layer.kl(&prep), grad))
}

/// Single-layer ELBO with the expected log-likelihood estimated from `n_mc`
/// reparameterized samples per point, and its gradient through the sampling path
/// in the layout `[layer params..., ln noise]`. Equal seeds give common random
/// numbers.
pub fn svgp_elbo<C: Covariance + InputGradient>(
    layer: &SvgpLayer<C>,
    data: &Dataset,
    log_noise: f64,
    n_mc: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if n_mc == 0 {
        return Err(contract("at least one Monte-Carlo sample is required"));
    }
    check_elbo_inputs(layer, data)?;
    let prep = layer.prepare()?;
    let pass = layer.forward(&prep, data.x.clone());
    let noise = log_noise.exp();
    let n = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ell = 0.0;
    let mut g_noise = 0.0;
    let mut m_bar = DVector::zeros(n);
    let mut s_bar = DVector::zeros(n);
    let w = 1.0 / n_mc as f64;
    for _ in 0..n_mc {
        for i in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            let sd = pass.var[i].max(0.0).sqrt();
            let f = pass.mean[i] + sd * e;
            let r = data.y[i] - f;
            ell += w * (-0.5 * (LN_2PI + log_noise) - 0.5 * r * r / noise);
            g_noise += w * (-0.5 + 0.5 * r * r / noise);
            let f_bar = w * r / noise;
            m_bar[i] += f_bar;
            if sd > 0.0 {
                s_bar[i] += f_bar * e / (2.0 * sd);
            }
        }
    }
    let mut g = layer.zero_grad();
    layer.backward(&prep, &pass, &m_bar, &s_bar, &mut g);
    layer.kl_backward(&prep, -1.0, &mut g);
    layer.finish(&prep, &mut g);
    let mut grad = layer.flatten(&g);
    grad.push(g_noise);
    Ok((ell - layer.kl(&prep), grad))
}

/// Sets `q(w)` to the exact posterior of a layer whose inducing inputs are the
/// training inputs, under Gaussian noise of variance `noise`.
pub fn set_optimal_variational<C: Covariance + InputGradient>(
    layer: &mut SvgpLayer<C>,
    y: &DVector<f64>,
    noise: f64,
) -> Result<()> {
    let m = layer.n_inducing();
    if y.len() != m {
        return Err(contract("optimal q needs one observation per inducing point"));
    }
    let lz = layer.prepare()?.kzz.l;
    // posterior of w under y = Lz w + e, w ~ N(0, I)
    let prec = DMatrix::identity(m, m) + lz.transpose() * &lz / noise;
    let pf = jittered_cholesky(&prec, 1.0, &[])?;
    let cov = pf.inverse();
    layer.v = &cov * (lz.transpose() * y) / noise;
    let chol = jittered_cholesky(&cov, 1.0, &[])?.l;
    for i in 0..m {
        for j in 0..i {
            layer.l_raw[(i, j)] = chol[(i, j)];
        }
        layer.l_raw[(i, i)] = softplus_inv(chol[(i, i)]);
    }
    Ok(())
}
