//! Multi-fidelity deep GP: one sparse variational layer per fidelity, trained
//! jointly by doubly stochastic variational inference.
//!
//! Layer 1 maps `x` to the lowest fidelity. Layer `t > 1` maps `(x, f_{t-1}(x))`
//! through the composite kernel used by NARGP. The data of level `t` enter the
//! bound through samples propagated from layer 1 up to layer `t`; the expected
//! log-likelihood at layer `t` itself is computed in closed form.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariance::{Covariance, InputGradient, ParamBound};
use crate::doe::subset_rows;
use crate::error::{contract, Error, Result};
use crate::exact::{ExactPosterior, ExactProblem};
use crate::gp::{Dataset, PosteriorPrediction};
use crate::kernels::{CompositeKernel, KernelSpec};
use crate::mf::dataset::{MultiFidelityDataset, NESTING_TOL};
use crate::mf::lmc::level_scalings;
use crate::mf::nargp::mixture_moments;
use crate::mf::svgp::{expected_log_lik, LayerGrad, Pass, Prepared, SvgpLayer};
use crate::optim::{Adam, OptConfig};
use crate::scaling::{InputScaling, OutputScaling};

/// Kernel of one MF-DGP layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerKernel {
    Base(KernelSpec),
    Composite(CompositeKernel),
}

macro_rules! delegate {
    ($self:ident, $k:ident => $e:expr) => {
        match $self {
            LayerKernel::Base($k) => $e,
            LayerKernel::Composite($k) => $e,
        }
    };
}

impl Covariance for LayerKernel {
    fn n_params(&self) -> usize {
        delegate!(self, k => k.n_params())
    }
    fn n_cols(&self) -> usize {
        delegate!(self, k => k.n_cols())
    }
    fn bounds(&self) -> Vec<ParamBound> {
        delegate!(self, k => k.bounds())
    }
    fn cross(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        delegate!(self, k => k.cross(p, a, b))
    }
    fn diag(&self, p: &[f64], a: &DMatrix<f64>) -> DVector<f64> {
        delegate!(self, k => k.diag(p, a))
    }
    fn cross_grad(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        delegate!(self, k => k.cross_grad(p, a, b))
    }
    fn diag_grad(&self, p: &[f64], a: &DMatrix<f64>) -> Vec<DVector<f64>> {
        delegate!(self, k => k.diag_grad(p, a))
    }
}

impl InputGradient for LayerKernel {
    fn input_grad(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        delegate!(self, k => k.input_grad(p, a, b, w))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfdgpConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Fractions of `iterations` after which the step size is multiplied by `decay`.
    pub decay_at: Vec<f64>,
    pub decay: f64,
    /// Propagated samples per iteration.
    pub n_mc: usize,
    /// Subsample the first layer's inducing inputs down to this many points.
    pub max_inducing: Option<usize>,
    /// Range of every level's noise variance in standardized units. The floor
    /// keeps the Monte-Carlo likelihood gradients from blowing up on noiseless data.
    pub noise_range: (f64, f64),
}

impl Default for MfdgpConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            learning_rate: 1e-2,
            decay_at: vec![0.6, 0.85],
            decay: 0.1,
            n_mc: 10,
            max_inducing: None,
            noise_range: (1e-3, 1.0),
        }
    }
}

impl MfdgpConfig {
    fn step_size(&self, it: usize) -> f64 {
        let frac = it as f64 / self.iterations.max(1) as f64;
        let k = self.decay_at.iter().filter(|&&d| frac >= d).count();
        self.learning_rate * self.decay.powi(k as i32)
    }
}

/// A trained multi-fidelity deep GP. Layers and noises live in standardized units.
#[derive(Debug, Clone)]
pub struct MFDGPModel {
    pub layers: Vec<SvgpLayer<LayerKernel>>,
    /// Log noise variance per level.
    pub log_noise: Vec<f64>,
    pub input_scaling: InputScaling,
    pub output_scalings: Vec<OutputScaling>,
    /// ELBO estimate at every training iteration.
    pub elbo_trace: Vec<f64>,
    /// Seed of the prediction sampler.
    pub seed: u64,
    /// Standardized training data, one entry per level.
    train: Vec<Dataset>,
}

fn augment(x: &DMatrix<f64>, f: &DVector<f64>) -> DMatrix<f64> {
    let d = x.ncols();
    let mut a = DMatrix::zeros(x.nrows(), d + 1);
    a.columns_mut(0, d).copy_from(x);
    a.column_mut(d).copy_from(f);
    a
}

fn draw(rng: &mut ChaCha8Rng, mean: &DVector<f64>, var: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let eps = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    let f = DVector::from_fn(mean.len(), |i, _| mean[i] + var[i].max(0.0).sqrt() * eps[i]);
    (f, eps)
}

/// Adjoints of `(mean, var)` of a sample `mean + sqrt(var) eps` given its adjoint.
fn sample_backward(f_bar: &DVector<f64>, eps: &DVector<f64>, var: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let s_bar = DVector::from_fn(f_bar.len(), |i, _| {
        let sd = var[i].max(0.0).sqrt();
        if sd > 0.0 {
            f_bar[i] * eps[i] / (2.0 * sd)
        } else {
            0.0
        }
    });
    (f_bar.clone(), s_bar)
}

impl MFDGPModel {
    /// Model from explicit layers, e.g. a single SVGP layer.
    pub fn from_layers(
        layers: Vec<SvgpLayer<LayerKernel>>,
        log_noise: Vec<f64>,
        input_scaling: InputScaling,
        output_scalings: Vec<OutputScaling>,
        seed: u64,
    ) -> Result<Self> {
        if layers.is_empty() || log_noise.len() != layers.len() || output_scalings.len() != layers.len() {
            return Err(contract("need one noise and one output scaling per layer"));
        }
        Ok(Self { layers, log_noise, input_scaling, output_scalings, elbo_trace: Vec::new(), seed, train: Vec::new() })
    }

    pub fn n_levels(&self) -> usize {
        self.layers.len()
    }

    /// Trainable parameters: kernel, variational mean and factor of every layer
    /// plus one noise per level.
    pub fn n_hyperparams(&self) -> usize {
        self.layers.iter().map(|l| l.n_params()).sum::<usize>() + self.log_noise.len()
    }

    fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.layers.iter().flat_map(|l| l.params()).collect();
        p.extend_from_slice(&self.log_noise);
        p
    }

    fn set_params(&mut self, p: &[f64]) {
        let mut o = 0;
        for l in &mut self.layers {
            let n = l.n_params();
            l.set_params(&p[o..o + n]);
            o += n;
        }
        self.log_noise.copy_from_slice(&p[o..]);
    }

    /// Stochastic ELBO over all levels of the training data and its gradient
    /// w.r.t. the flat parameters.
    fn elbo_grad(&self, n_mc: usize, rng: &mut ChaCha8Rng) -> Result<(f64, Vec<f64>)> {
        let preps: Vec<Prepared> = self.layers.iter().map(|l| l.prepare()).collect::<Result<_>>()?;
        let mut grads: Vec<LayerGrad> = self.layers.iter().map(|l| l.zero_grad()).collect();
        let mut g_noise = vec![0.0; self.log_noise.len()];
        let mut elbo = 0.0;
        for (t, data) in self.train.iter().enumerate() {
            let noise = self.log_noise[t].exp();
            let first = self.layers[0].forward(&preps[0], data.x.clone());
            if t == 0 {
                let (v, mb, sb, gn) = expected_log_lik(&data.y, &first.mean, &first.var, noise);
                elbo += v;
                g_noise[0] += gn;
                self.layers[0].backward(&preps[0], &first, &mb, &sb, &mut grads[0]);
                continue;
            }
            let w = 1.0 / n_mc as f64;
            let n = data.len();
            let mut m0_bar = DVector::zeros(n);
            let mut s0_bar = DVector::zeros(n);
            for _ in 0..n_mc {
                let (mut f, mut eps) = draw(rng, &first.mean, &first.var);
                let mut tape: Vec<(Pass, DVector<f64>)> = Vec::new();
                let mut eps_tape = vec![eps.clone()];
                for l in 1..=t {
                    let pass = self.layers[l].forward(&preps[l], augment(&data.x, &f));
                    if l < t {
                        (f, eps) = draw(rng, &pass.mean, &pass.var);
                        eps_tape.push(eps.clone());
                    }
                    tape.push((pass, f.clone()));
                }
                let top = &tape[t - 1].0;
                let (v, mb, sb, gn) = expected_log_lik(&data.y, &top.mean, &top.var, noise);
                elbo += w * v;
                g_noise[t] += w * gn;
                let (mut mb, mut sb) = (mb * w, sb * w);
                for l in (1..=t).rev() {
                    let pass = &tape[l - 1].0;
                    let a_bar = self.layers[l].backward(&preps[l], pass, &mb, &sb, &mut grads[l]);
                    let f_bar = a_bar.column(a_bar.ncols() - 1).into_owned();
                    let prev_var = if l == 1 { &first.var } else { &tape[l - 2].0.var };
                    (mb, sb) = sample_backward(&f_bar, &eps_tape[l - 1], prev_var);
                }
                m0_bar += mb;
                s0_bar += sb;
            }
            self.layers[0].backward(&preps[0], &first, &m0_bar, &s0_bar, &mut grads[0]);
        }
        let mut grad = Vec::with_capacity(self.n_hyperparams());
        for ((layer, prep), g) in self.layers.iter().zip(&preps).zip(grads.iter_mut()) {
            elbo -= layer.kl(prep);
            layer.kl_backward(prep, -1.0, g);
            layer.finish(prep, g);
            grad.extend(layer.flatten(g));
        }
        grad.extend(g_noise);
        Ok((elbo, grad))
    }

    /// Stochastic ELBO estimate on the training data with `n_mc` samples.
    pub fn elbo(&self, n_mc: usize, seed: u64) -> Result<f64> {
        if self.train.is_empty() {
            return Err(contract("model has no training data attached"));
        }
        Ok(self.elbo_grad(n_mc.max(1), &mut ChaCha8Rng::seed_from_u64(seed))?.0)
    }

    fn train(&mut self, cfg: &MfdgpConfig, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = self.params();
        let mut adam = Adam::new(p.len(), cfg.learning_rate);
        let (lo, hi) = (cfg.noise_range.0.ln(), cfg.noise_range.1.ln());
        let n_noise = self.log_noise.len();
        self.elbo_trace.clear();
        for it in 0..cfg.iterations {
            let (elbo, grad) = self.elbo_grad(cfg.n_mc, &mut rng)?;
            if !elbo.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    diagnostics: vec![format!("MF-DGP ELBO diverged at iteration {it} (ELBO {elbo}); iterate {p:?}")],
                });
            }
            self.elbo_trace.push(elbo);
            let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
            adam.lr = cfg.step_size(it);
            adam.step(&mut p, &neg);
            let k = p.len();
            for v in &mut p[k - n_noise..] {
                *v = v.clamp(lo, hi);
            }
            self.set_params(&p);
        }
        Ok(())
    }

    /// Monte-Carlo prediction of level `level` (0-based) with `n_samples`
    /// propagated paths per query point. Level 0 is returned in closed form.
    pub fn predict_level(&self, xq: &DMatrix<f64>, level: usize, n_samples: usize) -> Result<PosteriorPrediction> {
        if level >= self.n_levels() {
            return Err(contract(format!("level {level} out of range")));
        }
        if n_samples < 2 {
            return Err(contract("at least two samples are required"));
        }
        if xq.ncols() != self.input_scaling.offset.len() {
            return Err(contract(format!(
                "query has {} columns, model was trained on {}",
                xq.ncols(),
                self.input_scaling.offset.len()
            )));
        }
        let xs = self.input_scaling.apply(xq);
        let preps: Vec<Prepared> = self.layers[..=level].iter().map(|l| l.prepare()).collect::<Result<_>>()?;
        let first = self.layers[0].forward(&preps[0], xs.clone());
        let os = &self.output_scalings[level];
        if level == 0 {
            let var = first.var.map(|v| v.max(0.0));
            return Ok(PosteriorPrediction::gaussian(os.invert_mean(&first.mean), os.invert_var(&var)));
        }
        let n = xq.nrows();
        let mut mean = DVector::zeros(n);
        let mut var = DVector::zeros(n);
        let mut se = DVector::zeros(n);
        for q in 0..n {
            // per-point stream: results do not depend on the other query points
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(q as u64);
            let m0 = DVector::from_element(n_samples, first.mean[q]);
            let v0 = DVector::from_element(n_samples, first.var[q]);
            let (mut f, _) = draw(&mut rng, &m0, &v0);
            let xrep = DMatrix::from_fn(n_samples, xs.ncols(), |_, c| xs[(q, c)]);
            let mut top = None;
            for l in 1..=level {
                let pass = self.layers[l].forward(&preps[l], augment(&xrep, &f));
                if l < level {
                    f = draw(&mut rng, &pass.mean, &pass.var).0;
                } else {
                    top = Some(pass);
                }
            }
            let top = top.expect("level >= 1");
            let comp_var: Vec<f64> = top.var.iter().map(|v| v.max(0.0)).collect();
            let (m, v, s) = mixture_moments(top.mean.as_slice(), &comp_var);
            mean[q] = m * os.std + os.mean;
            var[q] = v * os.std * os.std;
            se[q] = s * os.std;
        }
        Ok(PosteriorPrediction { mean, variance: var, covariance: None, mc_std_error: Some(se) })
    }

    /// Monte-Carlo prediction of the top level.
    pub fn predict(&self, xq: &DMatrix<f64>, n_samples: usize) -> Result<PosteriorPrediction> {
        self.predict_level(xq, self.n_levels() - 1, n_samples)
    }
}

/// Mean of the initial exact fits chained through all levels in `inits`.
fn plug_in(inits: &[ExactPosterior<LayerKernel>], x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let h = DMatrix::zeros(x.nrows(), 0);
    let mut f = inits[0].predict(x, &h)?.0;
    for post in &inits[1..] {
        f = post.predict(&augment(x, &f), &h)?.0;
    }
    Ok(f)
}

fn subsample(x: &DMatrix<f64>, max: Option<usize>) -> DMatrix<f64> {
    match max {
        Some(k) if k >= 1 && k < x.nrows() => {
            let n = x.nrows();
            let idx: Vec<usize> = (0..k).map(|i| i * n / k).collect();
            x.select_rows(&idx)
        }
        _ => x.clone(),
    }
}

/// MF-DGP with squared-exponential ARD kernels and the default configuration.
pub fn mfdgp_fit(mfdata: &MultiFidelityDataset, opt: &OptConfig) -> Result<MFDGPModel> {
    mfdgp_fit_with(&KernelSpec::squared_exponential(mfdata.dim()), mfdata, opt, &MfdgpConfig::default())
}

/// MF-DGP fit. Kernel hyperparameters and noises start from exact zero-mean GP
/// fits of each level in the model's own coordinates (multi-start per `opt`);
/// the variational distributions start at `q(u) = N(0, 1e-4 K_ZZ)`.
///
/// Inducing inputs are fixed: the LF design for layer 1, and for layer `t > 1`
/// the level-`t` design augmented with the level-`(t-1)` observations there
/// (nested designs) or the previous initial fit's mean (otherwise).
pub fn mfdgp_fit_with(
    spec: &KernelSpec,
    mfdata: &MultiFidelityDataset,
    opt: &OptConfig,
    cfg: &MfdgpConfig,
) -> Result<MFDGPModel> {
    if cfg.n_mc == 0 {
        return Err(contract("at least one Monte-Carlo sample is required"));
    }
    if !(cfg.noise_range.0 > 0.0 && cfg.noise_range.0 <= cfg.noise_range.1) {
        return Err(contract("invalid noise range"));
    }
    if spec.input_dim != mfdata.dim() {
        return Err(contract("kernel dimension does not match the dataset"));
    }
    let (is, os) = level_scalings(mfdata, opt);
    let train: Vec<Dataset> = mfdata
        .levels
        .iter()
        .zip(&os)
        .map(|(l, s)| Dataset::new(is.apply(&l.x), s.apply(&l.y)))
        .collect::<Result<_>>()?;
    let (lo, hi) = (cfg.noise_range.0.ln(), cfg.noise_range.1.ln());
    let mut layers = Vec::new();
    let mut log_noise = Vec::new();
    let mut inits: Vec<ExactPosterior<LayerKernel>> = Vec::new();
    for (t, data) in train.iter().enumerate() {
        let kernel = if t == 0 {
            LayerKernel::Base(spec.clone())
        } else {
            LayerKernel::Composite(CompositeKernel::from_spec(spec))
        };
        let x_in = if t == 0 {
            data.x.clone()
        } else {
            let prev = &train[t - 1];
            let f = match subset_rows(&prev.x, &data.x, NESTING_TOL) {
                Ok(rows) => DVector::from_iterator(rows.len(), rows.iter().map(|&r| prev.y[r])),
                Err(_) => plug_in(&inits, &data.x)?,
            };
            augment(&data.x, &f)
        };
        let h = DMatrix::zeros(data.len(), 0);
        let (post, _) = ExactProblem::new(&kernel, &x_in, &data.y, &h)?.fit(opt, &[])?;
        let z = if t == 0 { subsample(&x_in, cfg.max_inducing) } else { x_in };
        layers.push(SvgpLayer::new(kernel, post.cov_params.clone(), z)?);
        log_noise.push(post.log_noise[0].clamp(lo, hi));
        inits.push(post);
    }
    let mut model = MFDGPModel {
        layers,
        log_noise,
        input_scaling: is,
        output_scalings: os,
        elbo_trace: Vec::new(),
        seed: opt.seed,
        train,
    };
    model.train(cfg, opt.seed)?;
    Ok(model)
}

pub fn mfdgp_predict(model: &MFDGPModel, xq: &DMatrix<f64>, n_samples: usize) -> Result<PosteriorPrediction> {
    model.predict(xq, n_samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn three_level_model() -> MFDGPModel {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let levels: Vec<Dataset> = [9, 6, 4]
            .iter()
            .enumerate()
            .map(|(t, &n)| {
                let x = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>());
                let y = x.map(|v| (5.0 * v).sin() * (1.0 + 0.3 * t as f64) + 0.2 * t as f64).column(0).into_owned();
                Dataset::new(x, y).unwrap()
            })
            .collect();
        let data = MultiFidelityDataset::new(levels).unwrap();
        let cfg = MfdgpConfig { iterations: 0, ..Default::default() };
        let mut model =
            mfdgp_fit_with(&KernelSpec::squared_exponential(1), &data, &OptConfig::default().with_restarts(1), &cfg)
                .unwrap();
        // move away from the initial q so every adjoint path is non-trivial
        for layer in &mut model.layers {
            let mut p = layer.params();
            let nk = layer.kernel_params.len();
            for v in p[nk..].iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
            layer.set_params(&p);
        }
        model
    }

    #[test]
    fn elbo_gradient_matches_finite_differences_under_common_random_numbers() {
        let model = three_level_model();
        let p = model.params();
        let eval = |q: &[f64]| {
            let mut m = model.clone();
            m.set_params(q);
            m.elbo_grad(3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
        };
        let (_, grad) = eval(&p);
        let h = 1e-4;
        for j in 0..p.len() {
            let mut a = p.clone();
            a[j] += h;
            let mut b = p.clone();
            b[j] -= h;
            let fd = (eval(&a).0 - eval(&b).0) / (2.0 * h);
            assert!((grad[j] - fd).abs() <= 1e-4 * fd.abs().max(1.0), "param {j}: {} vs {fd}", grad[j]);
        }
    }

    #[test]
    fn step_size_decays_at_the_configured_fractions() {
        let cfg = MfdgpConfig { iterations: 100, ..Default::default() };
        assert_eq!(cfg.step_size(0), 1e-2);
        assert!((cfg.step_size(60) - 1e-3).abs() < 1e-15);
        assert!((cfg.step_size(99) - 1e-4).abs() < 1e-15);
    }
}
