//! Stationary p-exponential covariance functions and their hyperparameter gradients.
//!
//! The kernel between two points is
//! `variance * exp(-sum_k theta_k * |x_k - x'_k|^p_k)` where `theta_k` multiplies
//! the distance, so it is an *inverse* lengthscale. Squared exponential is the
//! special case `p_k = 2` for every dimension.
//!
//! Positive quantities live on a log scale. Exponents of the p-exponential family
//! are optimized through `p = 2 * sigmoid(z)`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{Covariance, InputGradient, ParamBound};
use crate::error::{contract, Result};

/// `ln(1e3)`: log-hyperparameters are bounded to `[-LOG_BOUND, LOG_BOUND]`.
pub const LOG_BOUND: f64 = 6.907_755_278_982_137;
/// Smallest admissible noise variance.
pub const NOISE_FLOOR: f64 = 1e-10;

pub fn log_noise_floor() -> f64 {
    NOISE_FLOOR.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    /// Exponents are free hyperparameters in `(0, 2]`.
    PExponential,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub input_dim: usize,
    /// One inverse lengthscale per dimension when true, a shared one otherwise.
    pub ard: bool,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, input_dim: usize, ard: bool) -> Result<Self> {
        if input_dim == 0 {
            return Err(contract("kernel input dimension must be at least 1"));
        }
        Ok(Self { family, input_dim, ard })
    }

    /// ARD squared-exponential kernel over `input_dim` dimensions.
    pub fn squared_exponential(input_dim: usize) -> Self {
        Self { family: KernelFamily::SquaredExponential, input_dim, ard: true }
    }

    pub fn p_exponential(input_dim: usize) -> Self {
        Self { family: KernelFamily::PExponential, input_dim, ard: true }
    }

    pub fn with_ard(mut self, ard: bool) -> Self {
        self.ard = ard;
        self
    }

    pub fn n_lengthscales(&self) -> usize {
        if self.ard {
            self.input_dim
        } else {
            1
        }
    }

    fn n_exponents(&self) -> usize {
        match self.family {
            KernelFamily::SquaredExponential => 0,
            KernelFamily::PExponential => self.n_lengthscales(),
        }
    }

    /// Free parameters of the correlation shape (variance excluded).
    pub fn n_shape_params(&self) -> usize {
        self.n_lengthscales() + self.n_exponents()
    }

    /// Free kernel parameters: log-variance plus the shape parameters.
    pub fn n_kernel_params(&self) -> usize {
        1 + self.n_shape_params()
    }

    pub fn default_hyperparams(&self) -> HyperParams {
        HyperParams::new(self)
    }

    pub(crate) fn shape_bounds(&self) -> Vec<ParamBound> {
        let mut b = vec![ParamBound::new(-LOG_BOUND, LOG_BOUND); self.n_lengthscales()];
        // p in [0.1, 2): sigmoid(z) in [0.05, 1)
        b.extend(std::iter::repeat_n(
            ParamBound::with_init(logit(0.05), logit(1.0 - 1e-6), 0.0, logit(0.995)),
            self.n_exponents(),
        ));
        b
    }

    pub(crate) fn shape(&self, shape_params: &[f64]) -> Shape {
        let d = self.input_dim;
        let nl = self.n_lengthscales();
        let expand = |v: &[f64]| -> Vec<f64> {
            if self.ard {
                v.to_vec()
            } else {
                vec![v[0]; d]
            }
        };
        let theta = expand(&shape_params[..nl]).into_iter().map(f64::exp).collect();
        let (p, se) = match self.family {
            KernelFamily::SquaredExponential => (vec![2.0; d], true),
            KernelFamily::PExponential => (
                expand(&shape_params[nl..2 * nl]).into_iter().map(|z| 2.0 * sigmoid(z)).collect(),
                false,
            ),
        };
        Shape { theta, p, se, ard: self.ard }
    }
}

/// Kernel hyperparameters of a single-fidelity GP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub log_variance: f64,
    /// One entry per input dimension; only the first is read when ARD is off.
    pub log_inv_lengthscales: Vec<f64>,
    /// Exponents `p_k` in `(0, 2]`; ignored (fixed at 2) for squared exponential.
    pub exponents: Vec<f64>,
    pub log_noise: f64,
    pub mean_const: f64,
}

impl HyperParams {
    /// Unit variance, unit inverse lengthscales, noise at the floor, zero mean.
    pub fn new(spec: &KernelSpec) -> Self {
        Self {
            log_variance: 0.0,
            log_inv_lengthscales: vec![0.0; spec.input_dim],
            exponents: vec![2.0; spec.input_dim],
            log_noise: log_noise_floor(),
            mean_const: 0.0,
        }
    }

    pub fn variance(&self) -> f64 {
        self.log_variance.exp()
    }

    /// Noise variance, clamped at the noise floor.
    pub fn noise(&self) -> f64 {
        self.log_noise.max(log_noise_floor()).exp()
    }

    /// Flat kernel parameters `[log_variance, shape...]`.
    pub fn kernel_params(&self, spec: &KernelSpec) -> Vec<f64> {
        let nl = spec.n_lengthscales();
        let mut p = Vec::with_capacity(spec.n_kernel_params());
        p.push(self.log_variance);
        p.extend_from_slice(&self.log_inv_lengthscales[..nl]);
        if spec.family == KernelFamily::PExponential {
            p.extend(self.exponents[..nl].iter().map(|e| logit((e / 2.0).clamp(1e-12, 1.0 - 1e-12))));
        }
        p
    }

    pub fn set_kernel_params(&mut self, spec: &KernelSpec, p: &[f64]) {
        let d = spec.input_dim;
        let nl = spec.n_lengthscales();
        self.log_variance = p[0];
        self.log_inv_lengthscales =
            if spec.ard { p[1..1 + nl].to_vec() } else { vec![p[1]; d] };
        if spec.family == KernelFamily::PExponential {
            let e: Vec<f64> = p[1 + nl..1 + 2 * nl].iter().map(|z| 2.0 * sigmoid(*z)).collect();
            self.exponents = if spec.ard { e } else { vec![e[0]; d] };
        } else {
            self.exponents = vec![2.0; d];
        }
    }

    /// Flat single-fidelity GP parameters `[kernel..., log_noise, mean_const]`.
    pub fn to_gp_params(&self, spec: &KernelSpec) -> Vec<f64> {
        let mut p = self.kernel_params(spec);
        p.push(self.log_noise.max(log_noise_floor()));
        p.push(self.mean_const);
        p
    }

    pub fn from_gp_params(spec: &KernelSpec, p: &[f64]) -> Self {
        let nk = spec.n_kernel_params();
        let mut hp = Self::new(spec);
        hp.set_kernel_params(spec, &p[..nk]);
        hp.log_noise = p[nk];
        hp.mean_const = p[nk + 1];
        hp
    }

    fn check(&self, spec: &KernelSpec) -> Result<()> {
        if spec.input_dim == 0 {
            return Err(contract("kernel input dimension must be at least 1"));
        }
        if self.log_inv_lengthscales.len() < spec.n_lengthscales() {
            return Err(contract(format!(
                "expected {} inverse lengthscales, got {}",
                spec.n_lengthscales(),
                self.log_inv_lengthscales.len()
            )));
        }
        if spec.family == KernelFamily::PExponential {
            if self.exponents.len() < spec.n_lengthscales() {
                return Err(contract("missing kernel exponents"));
            }
            if self.exponents.iter().any(|p| !(*p > 0.0 && *p <= 2.0)) {
                return Err(contract("kernel exponents must lie in (0, 2]"));
            }
        }
        Ok(())
    }

    fn shape(&self, spec: &KernelSpec) -> Shape {
        let d = spec.input_dim;
        let pick = |v: &[f64], i: usize| if spec.ard { v[i] } else { v[0] };
        let theta = (0..d).map(|i| pick(&self.log_inv_lengthscales, i).exp()).collect();
        let (p, se) = match spec.family {
            KernelFamily::SquaredExponential => (vec![2.0; d], true),
            KernelFamily::PExponential => ((0..d).map(|i| pick(&self.exponents, i)).collect(), false),
        };
        Shape { theta, p, se, ard: spec.ard }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub(crate) fn logit(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

/// Evaluated correlation shape: inverse lengthscales and exponents per dimension.
#[derive(Debug, Clone)]
pub(crate) struct Shape {
    theta: Vec<f64>,
    p: Vec<f64>,
    se: bool,
    ard: bool,
}

impl Shape {
    #[inline]
    fn term(&self, k: usize, delta: f64) -> f64 {
        if self.se {
            self.theta[k] * delta * delta
        } else {
            self.theta[k] * delta.abs().powf(self.p[k])
        }
    }

    fn n_lengthscales(&self) -> usize {
        if self.ard {
            self.theta.len()
        } else {
            1
        }
    }

    /// `exp(-sum_k theta_k |a_ik - b_jk|^p_k)` over the columns `cols`.
    pub(crate) fn cross(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, cols: Range<usize>) -> DMatrix<f64> {
        let start = cols.start;
        let dims = cols.len();
        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
            let mut s = 0.0;
            for k in 0..dims {
                s += self.term(k, a[(i, start + k)] - b[(j, start + k)]);
            }
            (-s).exp()
        })
    }

    /// Derivatives of the shape matrix `s` with respect to the shape parameters.
    pub(crate) fn cross_grad(
        &self,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        cols: Range<usize>,
        s: &DMatrix<f64>,
    ) -> Vec<DMatrix<f64>> {
        let start = cols.start;
        let dims = cols.len();
        let nl = self.n_lengthscales();
        let mut g_ls = vec![DMatrix::zeros(a.nrows(), b.nrows()); nl];
        let mut g_p = if self.se { Vec::new() } else { vec![DMatrix::zeros(a.nrows(), b.nrows()); nl] };
        for k in 0..dims {
            let slot = if self.ard { k } else { 0 };
            let dp = self.p[k] * (1.0 - self.p[k] / 2.0);
            for j in 0..b.nrows() {
                for i in 0..a.nrows() {
                    let delta = a[(i, start + k)] - b[(j, start + k)];
                    let t = self.term(k, delta);
                    g_ls[slot][(i, j)] -= s[(i, j)] * t;
                    if !self.se && delta != 0.0 {
                        g_p[slot][(i, j)] -= s[(i, j)] * t * delta.abs().ln() * dp;
                    }
                }
            }
        }
        g_ls.extend(g_p);
        g_ls
    }

    /// `out[i, k] = sum_j ws[i, j] * d(-sum terms)/d a_ik`, i.e. the input gradient of
    /// the shape once `ws` already holds the weights multiplied by the shape values.
    pub(crate) fn input_grad(
        &self,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        cols: Range<usize>,
        ws: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let start = cols.start;
        let dims = cols.len();
        let mut out = DMatrix::zeros(a.nrows(), dims);
        for k in 0..dims {
            let (theta, p) = (self.theta[k], self.p[k]);
            for j in 0..b.nrows() {
                for i in 0..a.nrows() {
                    let delta = a[(i, start + k)] - b[(j, start + k)];
                    let dterm = if self.se {
                        2.0 * theta * delta
                    } else if delta == 0.0 {
                        0.0
                    } else {
                        theta * p * delta.abs().powf(p - 1.0) * delta.signum()
                    };
                    out[(i, k)] -= ws[(i, j)] * dterm;
                }
            }
        }
        out
    }
}

fn check_cols(spec: &KernelSpec, x: &DMatrix<f64>, name: &str) -> Result<()> {
    if x.ncols() != spec.input_dim {
        return Err(contract(format!(
            "{name} has {} columns, kernel expects {}",
            x.ncols(),
            spec.input_dim
        )));
    }
    Ok(())
}

/// Covariance matrix between the rows of `x` and `x2` (noise excluded).
pub fn kernel_eval(spec: &KernelSpec, hp: &HyperParams, x: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    hp.check(spec)?;
    check_cols(spec, x, "X")?;
    check_cols(spec, x2, "X2")?;
    Ok(hp.shape(spec).cross(x, x2, 0..spec.input_dim) * hp.variance())
}

/// Gradients of `K(X, X) + noise * I` with respect to every free hyperparameter
/// in log parameterization: `[log_variance, shape..., log_noise]`.
///
/// The last entry is the noise gradient `noise * I`.
pub fn kernel_grad(spec: &KernelSpec, hp: &HyperParams, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    hp.check(spec)?;
    check_cols(spec, x, "X")?;
    let p = hp.kernel_params(spec);
    let mut g = spec.cross_grad(&p, x, x);
    let n = x.nrows();
    g.push(DMatrix::identity(n, n) * hp.noise());
    Ok(g)
}

impl Covariance for KernelSpec {
    fn n_params(&self) -> usize {
        self.n_kernel_params()
    }

    fn n_cols(&self) -> usize {
        self.input_dim
    }

    fn bounds(&self) -> Vec<ParamBound> {
        let mut b = vec![ParamBound::new(-LOG_BOUND, LOG_BOUND)];
        b.extend(self.shape_bounds());
        b
    }

    fn cross(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.shape(&p[1..]).cross(a, b, 0..self.input_dim) * p[0].exp()
    }

    fn diag(&self, p: &[f64], a: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_element(a.nrows(), p[0].exp())
    }

    fn cross_grad(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let v = p[0].exp();
        let sh = self.shape(&p[1..]);
        let s = sh.cross(a, b, 0..self.input_dim);
        let mut g = Vec::with_capacity(self.n_kernel_params());
        g.push(&s * v);
        g.extend(sh.cross_grad(a, b, 0..self.input_dim, &s).into_iter().map(|m| m * v));
        g
    }

    fn diag_grad(&self, p: &[f64], a: &DMatrix<f64>) -> Vec<DVector<f64>> {
        let n = a.nrows();
        let mut g = vec![DVector::zeros(n); self.n_kernel_params()];
        g[0] = DVector::from_element(n, p[0].exp());
        g
    }
}

impl InputGradient for KernelSpec {
    fn input_grad(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        let sh = self.shape(&p[1..]);
        let s = sh.cross(a, b, 0..self.input_dim);
        let ws = w.component_mul(&s) * p[0].exp();
        sh.input_grad(a, b, 0..self.input_dim, &ws)
    }
}

/// Kernel over `(x, f)` inputs used by the non-linear fusion schemes:
/// `k = k_z(x, x') * k_f(f, f') + k_g(x, x')`.
///
/// The last input column holds the propagated lower-fidelity output `f`.
/// `k_f` has unit variance since its scale is not identifiable next to `k_z`'s.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeKernel {
    pub z: KernelSpec,
    pub f: KernelSpec,
    pub g: KernelSpec,
}

impl CompositeKernel {
    /// Squared-exponential parts over `input_dim` x-dimensions plus one output coordinate.
    pub fn new(input_dim: usize) -> Self {
        Self::from_spec(&KernelSpec::squared_exponential(input_dim))
    }

    /// Uses `base`'s family and ARD setting for all three parts.
    pub fn from_spec(base: &KernelSpec) -> Self {
        Self {
            z: base.clone(),
            f: KernelSpec { family: base.family, input_dim: 1, ard: true },
            g: base.clone(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.z.input_dim
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let nz = self.z.n_kernel_params();
        let nf = self.f.n_shape_params();
        (&p[..nz], &p[nz..nz + nf], &p[nz + nf..])
    }

    /// Flat parameters from the three parts: `[k_z..., k_f shape..., k_g...]`.
    pub fn params(z_log_var: f64, z_shape: &[f64], f_shape: &[f64], g_log_var: f64, g_shape: &[f64]) -> Vec<f64> {
        let mut p = vec![z_log_var];
        p.extend_from_slice(z_shape);
        p.extend_from_slice(f_shape);
        p.push(g_log_var);
        p.extend_from_slice(g_shape);
        p
    }

    fn parts(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> Parts {
        let d = self.input_dim();
        let (pz, pf, pg) = self.split(p);
        let (shz, shf, shg) = (self.z.shape(&pz[1..]), self.f.shape(pf), self.g.shape(&pg[1..]));
        let sz = shz.cross(a, b, 0..d);
        let sf = shf.cross(a, b, d..d + 1);
        let sg = shg.cross(a, b, 0..d);
        Parts { vz: pz[0].exp(), vg: pg[0].exp(), shz, shf, shg, sz, sf, sg }
    }
}

struct Parts {
    vz: f64,
    vg: f64,
    shz: Shape,
    shf: Shape,
    shg: Shape,
    sz: DMatrix<f64>,
    sf: DMatrix<f64>,
    sg: DMatrix<f64>,
}

impl Covariance for CompositeKernel {
    fn n_params(&self) -> usize {
        self.z.n_kernel_params() + self.f.n_shape_params() + self.g.n_kernel_params()
    }

    fn n_cols(&self) -> usize {
        self.input_dim() + 1
    }

    fn bounds(&self) -> Vec<ParamBound> {
        let mut b = self.z.bounds();
        b.extend(self.f.shape_bounds());
        b.extend(self.g.bounds());
        b
    }

    fn cross(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let pt = self.parts(p, a, b);
        pt.sz.component_mul(&pt.sf) * pt.vz + pt.sg * pt.vg
    }

    fn diag(&self, p: &[f64], a: &DMatrix<f64>) -> DVector<f64> {
        let (pz, _, pg) = self.split(p);
        DVector::from_element(a.nrows(), pz[0].exp() + pg[0].exp())
    }

    fn cross_grad(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let d = self.input_dim();
        let pt = self.parts(p, a, b);
        let szf = pt.sz.component_mul(&pt.sf);
        let mut g = Vec::with_capacity(self.n_params());
        g.push(&szf * pt.vz);
        for m in pt.shz.cross_grad(a, b, 0..d, &pt.sz) {
            g.push(m.component_mul(&pt.sf) * pt.vz);
        }
        for m in pt.shf.cross_grad(a, b, d..d + 1, &pt.sf) {
            g.push(m.component_mul(&pt.sz) * pt.vz);
        }
        g.push(&pt.sg * pt.vg);
        for m in pt.shg.cross_grad(a, b, 0..d, &pt.sg) {
            g.push(m * pt.vg);
        }
        g
    }

    fn diag_grad(&self, p: &[f64], a: &DMatrix<f64>) -> Vec<DVector<f64>> {
        let n = a.nrows();
        let (pz, _, pg) = self.split(p);
        let mut g = vec![DVector::zeros(n); self.n_params()];
        g[0] = DVector::from_element(n, pz[0].exp());
        let ig = self.z.n_kernel_params() + self.f.n_shape_params();
        g[ig] = DVector::from_element(n, pg[0].exp());
        g
    }
}

impl InputGradient for CompositeKernel {
    fn input_grad(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.input_dim();
        let pt = self.parts(p, a, b);
        let wzf = w.component_mul(&pt.sz).component_mul(&pt.sf) * pt.vz;
        let wg = w.component_mul(&pt.sg) * pt.vg;
        let gx = pt.shz.input_grad(a, b, 0..d, &wzf) + pt.shg.input_grad(a, b, 0..d, &wg);
        let gf = pt.shf.input_grad(a, b, d..d + 1, &wzf);
        let mut out = DMatrix::zeros(a.nrows(), d + 1);
        out.columns_mut(0, d).copy_from(&gx);
        out.column_mut(d).copy_from(&gf.column(0));
        out
    }
}
