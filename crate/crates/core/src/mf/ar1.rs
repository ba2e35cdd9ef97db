//! Autoregressive fusion `f_t(x) = rho_{t-1} f_{t-1}(x) + gamma_t(x)`.
//!
//! Two inference schemes are provided: the recursive one, which fits one GP per
//! level on a nested design, and the fully coupled one, which trains the joint
//! two-level GP directly. On nested designs with shared hyperparameters both give
//! the same posterior.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{Covariance, ParamBound};
use crate::error::{contract, Result};
use crate::exact::{constant_basis, ExactPosterior, ExactProblem};
use crate::gp::{fit_gp, scalings_for, Dataset, PosteriorPrediction, TrainedGP};
use crate::kernels::{HyperParams, KernelSpec};
use crate::mf::dataset::MultiFidelityDataset;
use crate::mf::lmc::{augment_level, indicator, level_scalings, stack_levels};
use crate::optim::OptConfig;
use crate::scaling::{InputScaling, OutputScaling};

/// Bound on the scale factors.
pub const RHO_BOUND: ParamBound = ParamBound::with_init(-5.0, 5.0, -2.0, 2.0);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ar1Config {
    /// Fixed scale factors (one per level above the first); estimated when `None`.
    pub fixed_rho: Option<Vec<f64>>,
}

/// Discrepancy GP of one level above the first.
#[derive(Debug, Clone)]
pub struct Ar1Level {
    pub spec: KernelSpec,
    pub rho: f64,
    /// When true the GP mean is `[1, m_prev_scaled] beta` with `rho = beta[1]`;
    /// otherwise the GP models `y - rho * m_prev` with a constant mean.
    pub rho_in_mean: bool,
    pub input_scaling: InputScaling,
    pub output_scaling: OutputScaling,
    posterior: ExactPosterior<KernelSpec>,
}

impl Ar1Level {
    fn basis(&self, m_prev: &DVector<f64>) -> DMatrix<f64> {
        if self.rho_in_mean {
            let os = &self.output_scaling;
            DMatrix::from_fn(m_prev.len(), 2, |i, j| if j == 0 { 1.0 } else { (m_prev[i] - os.mean) / os.std })
        } else {
            constant_basis(m_prev.len())
        }
    }

    fn predict(&self, xq: &DMatrix<f64>, prev: &PosteriorPrediction) -> Result<PosteriorPrediction> {
        let xs = self.input_scaling.apply(xq);
        let (m, v) = self.posterior.predict(&xs, &self.basis(&prev.mean))?;
        let os = &self.output_scaling;
        let mut mean = os.invert_mean(&m);
        if !self.rho_in_mean {
            mean += &prev.mean * self.rho;
        }
        let var = os.invert_var(&v) + &prev.variance * (self.rho * self.rho);
        Ok(PosteriorPrediction::gaussian(mean, var))
    }

    pub fn posterior(&self) -> &ExactPosterior<KernelSpec> {
        &self.posterior
    }

    /// Prior variance of the discrepancy in original units.
    pub fn discrepancy_variance(&self) -> f64 {
        self.posterior.cov_params[0].exp() * self.output_scaling.std.powi(2)
    }
}

/// Recursive AR1 model.
#[derive(Debug, Clone)]
pub struct AR1Model {
    pub level1: TrainedGP,
    pub levels: Vec<Ar1Level>,
}

impl AR1Model {
    pub fn n_levels(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn rhos(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.rho).collect()
    }

    pub fn n_hyperparams(&self) -> usize {
        self.level1.n_hyperparams()
            + self.levels.iter().map(|l| l.spec.n_kernel_params() + 2 + usize::from(l.rho_in_mean)).sum::<usize>()
    }

    /// Prediction of level `level` (0-based).
    pub fn predict_level(&self, xq: &DMatrix<f64>, level: usize) -> Result<PosteriorPrediction> {
        if level >= self.n_levels() {
            return Err(contract(format!("level {level} out of range")));
        }
        let mut p = self.level1.predict(xq)?;
        for l in &self.levels[..level] {
            p = l.predict(xq, &p)?;
        }
        Ok(p)
    }

    pub fn predict(&self, xq: &DMatrix<f64>) -> Result<PosteriorPrediction> {
        self.predict_level(xq, self.n_levels() - 1)
    }

    /// Recursive model at fixed hyperparameters, without standardization.
    ///
    /// `hps[t]` holds the kernel, noise and constant mean of level `t`; for `t >= 1`
    /// these describe the discrepancy `gamma_t`.
    pub fn from_hyperparams(
        spec: &KernelSpec,
        mfdata: &MultiFidelityDataset,
        hps: &[HyperParams],
        rhos: &[f64],
    ) -> Result<Self> {
        if hps.len() != mfdata.n_levels() || rhos.len() + 1 != mfdata.n_levels() {
            return Err(contract("need one hyperparameter set per level and one rho per level above the first"));
        }
        let d = mfdata.dim();
        let level1 = TrainedGP::from_hyperparams(
            spec,
            &hps[0],
            &mfdata.levels[0],
            InputScaling::identity(d),
            OutputScaling::identity(),
        )?;
        let mut model = AR1Model { level1, levels: Vec::new() };
        for t in 1..mfdata.n_levels() {
            let data = &mfdata.levels[t];
            let prev = model.predict_level(&data.x, t - 1)?;
            let h = DMatrix::from_fn(data.len(), 2, |i, j| if j == 0 { 1.0 } else { prev.mean[i] });
            let mut p = hps[t].kernel_params(spec);
            p.push(hps[t].log_noise);
            p.push(hps[t].mean_const);
            p.push(rhos[t - 1]);
            let posterior = ExactProblem::new(spec, &data.x, &data.y, &h)?.condition(&p)?;
            model.levels.push(Ar1Level {
                spec: spec.clone(),
                rho: rhos[t - 1],
                rho_in_mean: true,
                input_scaling: InputScaling::identity(d),
                output_scaling: OutputScaling::identity(),
                posterior,
            });
        }
        Ok(model)
    }
}

/// Recursive AR1 inference on a nested dataset.
pub fn ar1_fit_recursive(mfdata: &MultiFidelityDataset, opt: &OptConfig) -> Result<AR1Model> {
    ar1_fit_recursive_with(&KernelSpec::squared_exponential(mfdata.dim()), mfdata, opt, &Ar1Config::default(), None)
}

/// Recursive AR1 with an explicit kernel, configuration and optionally an
/// already-fitted first level.
pub fn ar1_fit_recursive_with(
    spec: &KernelSpec,
    mfdata: &MultiFidelityDataset,
    opt: &OptConfig,
    config: &Ar1Config,
    level1: Option<TrainedGP>,
) -> Result<AR1Model> {
    mfdata.require_nested()?;
    if let Some(r) = &config.fixed_rho {
        if r.len() + 1 != mfdata.n_levels() {
            return Err(contract("need one fixed rho per level above the first"));
        }
    }
    let level1 = match level1 {
        Some(g) => g,
        None => fit_gp(spec, &mfdata.levels[0], opt)?,
    };
    let mut model = AR1Model { level1, levels: Vec::new() };
    for t in 1..mfdata.n_levels() {
        let data = &mfdata.levels[t];
        let prev = model.predict_level(&data.x, t - 1)?;
        let level = match &config.fixed_rho {
            Some(r) => {
                let rho = r[t - 1];
                let resid = Dataset::new(data.x.clone(), &data.y - &prev.mean * rho)?;
                let gp = fit_gp(spec, &resid, opt)?;
                Ar1Level {
                    spec: spec.clone(),
                    rho,
                    rho_in_mean: false,
                    input_scaling: gp.input_scaling.clone(),
                    output_scaling: gp.output_scaling,
                    posterior: gp.posterior().clone(),
                }
            }
            None => {
                let (is, os) = scalings_for(data, opt);
                let xs = is.apply(&data.x);
                let ys = os.apply(&data.y);
                let h = DMatrix::from_fn(data.len(), 2, |i, j| if j == 0 { 1.0 } else { (prev.mean[i] - os.mean) / os.std });
                let mut problem = ExactProblem::new(spec, &xs, &ys, &h)?;
                problem.mean_bounds[1] = RHO_BOUND;
                let (posterior, _) = problem.fit(opt, &[])?;
                Ar1Level {
                    spec: spec.clone(),
                    rho: posterior.beta[1],
                    rho_in_mean: true,
                    input_scaling: is,
                    output_scaling: os,
                    posterior,
                }
            }
        };
        model.levels.push(level);
    }
    Ok(model)
}

pub fn ar1_predict(model: &AR1Model, xq: &DMatrix<f64>) -> Result<PosteriorPrediction> {
    model.predict(xq)
}

/// Joint covariance of the two-level autoregressive model over inputs `[x, level]`:
/// `k1` on LF-LF, `rho k1` on LF-HF and `rho^2 k1 + k_gamma` on HF-HF.
#[derive(Debug, Clone, PartialEq)]
pub struct Ar1CoupledCovariance {
    pub k1: KernelSpec,
    pub kg: KernelSpec,
}

impl Ar1CoupledCovariance {
    pub fn new(spec: &KernelSpec) -> Self {
        Self { k1: spec.clone(), kg: spec.clone() }
    }

    fn split<'p>(&self, p: &'p [f64]) -> (&'p [f64], &'p [f64], f64) {
        let n1 = self.k1.n_kernel_params();
        let ng = self.kg.n_kernel_params();
        (&p[..n1], &p[n1..n1 + ng], p[n1 + ng])
    }

    fn x_part(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        a.columns(0, self.k1.input_dim).into_owned()
    }

    fn levels(&self, a: &DMatrix<f64>) -> Vec<bool> {
        a.column(self.k1.input_dim).iter().map(|v| *v >= 0.5).collect()
    }

    /// Flat parameters `[k1..., k_gamma..., rho]`.
    pub fn params(&self, hp1: &HyperParams, hpg: &HyperParams, rho: f64) -> Vec<f64> {
        let mut p = hp1.kernel_params(&self.k1);
        p.extend(hpg.kernel_params(&self.kg));
        p.push(rho);
        p
    }
}

impl Covariance for Ar1CoupledCovariance {
    fn n_params(&self) -> usize {
        self.k1.n_kernel_params() + self.kg.n_kernel_params() + 1
    }

    fn n_cols(&self) -> usize {
        self.k1.input_dim + 1
    }

    fn bounds(&self) -> Vec<ParamBound> {
        let mut b = self.k1.bounds();
        b.extend(self.kg.bounds());
        b.push(RHO_BOUND);
        b
    }

    fn cross(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let (p1, pg, rho) = self.split(p);
        let (xa, xb) = (self.x_part(a), self.x_part(b));
        let (la, lb) = (self.levels(a), self.levels(b));
        let k1 = self.k1.cross(p1, &xa, &xb);
        let kg = self.kg.cross(pg, &xa, &xb);
        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| match (la[i], lb[j]) {
            (false, false) => k1[(i, j)],
            (true, true) => rho * rho * k1[(i, j)] + kg[(i, j)],
            _ => rho * k1[(i, j)],
        })
    }

    fn diag(&self, p: &[f64], a: &DMatrix<f64>) -> DVector<f64> {
        let (p1, pg, rho) = self.split(p);
        let (v1, vg) = (p1[0].exp(), pg[0].exp());
        DVector::from_iterator(a.nrows(), self.levels(a).into_iter().map(|hf| if hf { rho * rho * v1 + vg } else { v1 }))
    }

    fn cross_grad(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let (p1, pg, rho) = self.split(p);
        let (xa, xb) = (self.x_part(a), self.x_part(b));
        let (la, lb) = (self.levels(a), self.levels(b));
        let weight = |i: usize, j: usize| match (la[i], lb[j]) {
            (false, false) => 1.0,
            (true, true) => rho * rho,
            _ => rho,
        };
        let mut out = Vec::with_capacity(self.n_params());
        let g1 = self.k1.cross_grad(p1, &xa, &xb);
        let k1 = g1[0].clone();
        for g in g1 {
            out.push(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| weight(i, j) * g[(i, j)]));
        }
        for g in self.kg.cross_grad(pg, &xa, &xb) {
            out.push(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| if la[i] && lb[j] { g[(i, j)] } else { 0.0 }));
        }
        out.push(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| match (la[i], lb[j]) {
            (false, false) => 0.0,
            (true, true) => 2.0 * rho * k1[(i, j)],
            _ => k1[(i, j)],
        }));
        out
    }

    fn diag_grad(&self, p: &[f64], a: &DMatrix<f64>) -> Vec<DVector<f64>> {
        let (p1, pg, rho) = self.split(p);
        let (v1, vg) = (p1[0].exp(), pg[0].exp());
        let hf = self.levels(a);
        let n = a.nrows();
        let mut out = vec![DVector::zeros(n); self.n_params()];
        out[0] = DVector::from_iterator(n, hf.iter().map(|&h| if h { rho * rho * v1 } else { v1 }));
        let ig = self.k1.n_kernel_params();
        out[ig] = DVector::from_iterator(n, hf.iter().map(|&h| if h { vg } else { 0.0 }));
        out[self.n_params() - 1] = DVector::from_iterator(n, hf.iter().map(|&h| if h { 2.0 * rho * v1 } else { 0.0 }));
        out
    }

    fn noise_groups(&self) -> usize {
        2
    }

    fn noise_group(&self, a: &DMatrix<f64>, row: usize) -> usize {
        usize::from(a[(row, self.k1.input_dim)] >= 0.5)
    }
}

/// Fully coupled two-level AR1 model.
#[derive(Debug, Clone)]
pub struct AR1CoupledModel {
    pub cov: Ar1CoupledCovariance,
    pub input_scaling: InputScaling,
    pub output_scalings: Vec<OutputScaling>,
    pub nlml_value: f64,
    posterior: ExactPosterior<Ar1CoupledCovariance>,
}

impl AR1CoupledModel {
    /// Scale factor between the fidelities in original output units.
    pub fn rho(&self) -> f64 {
        let p = &self.posterior.cov_params;
        p[p.len() - 1] * self.output_scalings[1].std / self.output_scalings[0].std
    }

    pub fn n_hyperparams(&self) -> usize {
        self.cov.n_params() + 4
    }

    pub fn params(&self) -> Vec<f64> {
        self.posterior.params()
    }

    /// Joint model at fixed hyperparameters without standardization. `hp1` and
    /// `hpg` carry the kernel, noise and constant mean of `f_1` and `gamma_2`.
    pub fn from_hyperparams(
        spec: &KernelSpec,
        mfdata: &MultiFidelityDataset,
        hp1: &HyperParams,
        hpg: &HyperParams,
        rho: f64,
    ) -> Result<Self> {
        if mfdata.n_levels() != 2 {
            return Err(contract("the coupled AR1 model supports exactly two levels"));
        }
        let cov = Ar1CoupledCovariance::new(spec);
        let mut p = cov.params(hp1, hpg, rho);
        p.extend([hp1.log_noise, hpg.log_noise, hp1.mean_const, rho * hp1.mean_const + hpg.mean_const]);
        let is = InputScaling::identity(mfdata.dim());
        let os = vec![OutputScaling::identity(); 2];
        let (x, y, h) = stack_levels(mfdata, &is, &os);
        let posterior = ExactProblem::new(&cov, &x, &y, &h)?.condition(&p)?;
        Ok(Self { nlml_value: posterior.nlml, cov, input_scaling: is, output_scalings: os, posterior })
    }

    /// Latent prediction of level `level` (0-based).
    pub fn predict_level(&self, xq: &DMatrix<f64>, level: usize) -> Result<PosteriorPrediction> {
        if level > 1 {
            return Err(contract(format!("level {level} out of range")));
        }
        if xq.ncols() != self.cov.k1.input_dim {
            return Err(contract("query dimension does not match the model"));
        }
        let a = augment_level(&self.input_scaling.apply(xq), level);
        let (m, v) = self.posterior.predict(&a, &indicator(xq.nrows(), 2, level))?;
        let os = &self.output_scalings[level];
        Ok(PosteriorPrediction::gaussian(os.invert_mean(&m), os.invert_var(&v)))
    }

    pub fn predict(&self, xq: &DMatrix<f64>) -> Result<PosteriorPrediction> {
        self.predict_level(xq, 1)
    }

    pub fn posterior(&self) -> &ExactPosterior<Ar1CoupledCovariance> {
        &self.posterior
    }
}

/// Maximum joint-likelihood fit of the coupled two-level AR1 model.
pub fn ar1_fit_coupled(mfdata: &MultiFidelityDataset, opt: &OptConfig) -> Result<AR1CoupledModel> {
    ar1_fit_coupled_with(&KernelSpec::squared_exponential(mfdata.dim()), mfdata, opt, &[])
}

/// Starting point for the coupled fit from two separate fits: a GP on the LF
/// data, then a GP on the HF data with mean `beta_0 + rho m_1(x)`, where `m_1` is
/// the LF posterior mean. The joint likelihood surface has poor local optima
/// that the hypercube starts alone miss on some designs.
fn two_stage_start(
    spec: &KernelSpec,
    mfdata: &MultiFidelityDataset,
    is: &InputScaling,
    os: &[OutputScaling],
    opt: &OptConfig,
) -> Result<Vec<f64>> {
    let (lf, hf) = (&mfdata.levels[0], &mfdata.levels[1]);
    let (x1, x2) = (is.apply(&lf.x), is.apply(&hf.x));
    let (y1, y2) = (os[0].apply(&lf.y), os[1].apply(&hf.y));
    let h1 = constant_basis(lf.len());
    let (post1, _) = ExactProblem::new(spec, &x1, &y1, &h1)?.fit(opt, &[])?;
    let (m1, _) = post1.predict(&x2, &constant_basis(hf.len()))?;
    let h2 = DMatrix::from_fn(hf.len(), 2, |i, j| if j == 0 { 1.0 } else { m1[i] });
    let mut problem = ExactProblem::new(spec, &x2, &y2, &h2)?;
    problem.mean_bounds[1] = RHO_BOUND;
    let (post2, _) = problem.fit(opt, &[])?;
    let (mean1, beta0, rho) = (post1.beta[0], post2.beta[0], post2.beta[1]);
    let mut p = post1.cov_params.clone();
    p.extend(&post2.cov_params);
    p.extend([rho, post1.log_noise[0], post2.log_noise[0], mean1, beta0 + rho * mean1]);
    Ok(p)
}

/// Coupled fit with an explicit kernel and extra optimizer starting points in the
/// flat layout `[k1..., k_gamma..., rho, log_noise_1, log_noise_2, mean_1, mean_2]`.
pub fn ar1_fit_coupled_with(
    spec: &KernelSpec,
    mfdata: &MultiFidelityDataset,
    opt: &OptConfig,
    extra_starts: &[Vec<f64>],
) -> Result<AR1CoupledModel> {
    if mfdata.n_levels() != 2 {
        return Err(contract("the coupled AR1 model supports exactly two levels"));
    }
    let cov = Ar1CoupledCovariance::new(spec);
    let (is, os) = level_scalings(mfdata, opt);
    let (x, y, h) = stack_levels(mfdata, &is, &os);
    let problem = ExactProblem::new(&cov, &x, &y, &h)?;
    let mut starts = extra_starts.to_vec();
    match two_stage_start(spec, mfdata, &is, &os, opt) {
        Ok(p) => {
            let bounds = problem.bounds();
            starts.insert(0, p.iter().zip(&bounds).map(|(v, b)| v.clamp(b.lower, b.upper)).collect());
        }
        Err(e) => log::debug!("no two-stage start for the coupled AR1 fit: {e}"),
    }
    let (posterior, res) = problem.fit(opt, &starts)?;
    Ok(AR1CoupledModel { nlml_value: res.f, cov, input_scaling: is, output_scalings: os, posterior })
}
