//! Non-linear autoregressive fusion: level `t` is a GP over `(x, f_{t-1}(x))`.
//!
//! Training plugs in the posterior mean of the level below; prediction propagates
//! the full lower-level uncertainty by Monte-Carlo sampling.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{contract, Result};
use crate::exact::{constant_basis, ExactPosterior, ExactProblem};
use crate::gp::{fit_gp, PosteriorPrediction, TrainedGP};
use crate::kernels::{CompositeKernel, KernelSpec};
use crate::mf::dataset::MultiFidelityDataset;
use crate::optim::OptConfig;
use crate::scaling::{InputScaling, OutputScaling};

/// Default number of Monte-Carlo samples used for prediction.
pub const DEFAULT_SAMPLES: usize = 1000;

/// GP of one level above the first, over augmented inputs `[x, f_prev]`.
#[derive(Debug, Clone)]
pub struct NargpLevel {
    pub kernel: CompositeKernel,
    pub input_scaling: InputScaling,
    pub output_scaling: OutputScaling,
    posterior: ExactPosterior<CompositeKernel>,
}

impl NargpLevel {
    /// Builds a level at fixed flat parameters `[kernel..., log_noise, mean]` on raw
    /// augmented inputs.
    pub fn from_params(
        kernel: CompositeKernel,
        x_aug: &DMatrix<f64>,
        y: &DVector<f64>,
        params: &[f64],
        input_scaling: InputScaling,
        output_scaling: OutputScaling,
    ) -> Result<Self> {
        let xs = input_scaling.apply(x_aug);
        let ys = output_scaling.apply(y);
        let h = constant_basis(y.len());
        let posterior = ExactProblem::new(&kernel, &xs, &ys, &h)?.condition(params)?;
        Ok(Self { kernel, input_scaling, output_scaling, posterior })
    }

    /// Gaussian prediction at augmented points.
    pub fn predict_augmented(&self, x_aug: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let xs = self.input_scaling.apply(x_aug);
        let (m, v) = self.posterior.predict(&xs, &constant_basis(x_aug.nrows()))?;
        Ok((self.output_scaling.invert_mean(&m), self.output_scaling.invert_var(&v)))
    }

    pub fn posterior(&self) -> &ExactPosterior<CompositeKernel> {
        &self.posterior
    }

    pub fn noise_variance(&self) -> f64 {
        self.posterior.noise(0) * self.output_scaling.std.powi(2)
    }
}

#[derive(Debug, Clone)]
pub struct NARGPModel {
    pub level1: TrainedGP,
    pub levels: Vec<NargpLevel>,
    /// Seed of the prediction sampler.
    pub seed: u64,
}

fn augment(x: &DMatrix<f64>, f: &DVector<f64>) -> DMatrix<f64> {
    let d = x.ncols();
    let mut a = DMatrix::zeros(x.nrows(), d + 1);
    a.columns_mut(0, d).copy_from(x);
    a.column_mut(d).copy_from(f);
    a
}

impl NARGPModel {
    pub fn n_levels(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn n_hyperparams(&self) -> usize {
        use crate::covariance::Covariance;
        self.level1.n_hyperparams() + self.levels.iter().map(|l| l.kernel.n_params() + 2).sum::<usize>()
    }

    /// Mean of level `level` with plug-in means of the levels below (no sampling).
    pub fn plug_in_mean(&self, xq: &DMatrix<f64>, level: usize) -> Result<DVector<f64>> {
        let mut m = self.level1.predict(xq)?.mean;
        for l in &self.levels[..level] {
            m = l.predict_augmented(&augment(xq, &m))?.0;
        }
        Ok(m)
    }

    /// Monte-Carlo prediction of the top level.
    pub fn predict(&self, xq: &DMatrix<f64>, n_samples: usize) -> Result<PosteriorPrediction> {
        self.predict_level(xq, self.n_levels() - 1, n_samples)
    }

    /// Monte-Carlo prediction of level `level` (0-based): mixture mean and
    /// law-of-total-variance estimate over `n_samples` propagated paths per point.
    pub fn predict_level(&self, xq: &DMatrix<f64>, level: usize, n_samples: usize) -> Result<PosteriorPrediction> {
        if level >= self.n_levels() {
            return Err(contract(format!("level {level} out of range")));
        }
        let base = self.level1.predict(xq)?;
        if level == 0 {
            return Ok(base);
        }
        self.propagate(xq, &base, level, n_samples)
    }

    /// Propagates level-1 marginals `base` at `xq` up to level `level` by sampling.
    pub fn propagate(
        &self,
        xq: &DMatrix<f64>,
        base: &PosteriorPrediction,
        level: usize,
        n_samples: usize,
    ) -> Result<PosteriorPrediction> {
        if n_samples < 2 {
            return Err(contract("at least two samples are required"));
        }
        if level == 0 || level >= self.n_levels() {
            return Err(contract(format!("cannot propagate to level {level}")));
        }
        let d = xq.ncols();
        let n = xq.nrows();
        let mut mean = DVector::zeros(n);
        let mut var = DVector::zeros(n);
        let mut se = DVector::zeros(n);
        for q in 0..n {
            // per-point stream: results do not depend on the other query points
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(q as u64);
            let mut f = DVector::from_fn(n_samples, |_, _| {
                let e: f64 = StandardNormal.sample(&mut rng);
                base.mean[q] + base.variance[q].sqrt() * e
            });
            let xrep = DMatrix::from_fn(n_samples, d, |_, c| xq[(q, c)]);
            let mut comp = (DVector::zeros(0), DVector::zeros(0));
            for (t, l) in self.levels[..level].iter().enumerate() {
                comp = l.predict_augmented(&augment(&xrep, &f))?;
                if t + 1 < level {
                    f = DVector::from_fn(n_samples, |i, _| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        comp.0[i] + comp.1[i].sqrt() * e
                    });
                }
            }
            (mean[q], var[q], se[q]) = mixture_moments(comp.0.as_slice(), comp.1.as_slice());
        }
        Ok(PosteriorPrediction { mean, variance: var, covariance: None, mc_std_error: Some(se) })
    }
}

/// Mean, law-of-total-variance variance and Monte-Carlo standard error of the
/// mean of an equally weighted Gaussian mixture.
pub fn mixture_moments(means: &[f64], vars: &[f64]) -> (f64, f64, f64) {
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    let between = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / n;
    let within = vars.iter().sum::<f64>() / n;
    (mu, within + between, (between / n).sqrt())
}

/// Recursive NARGP fit. With `nested = true` the dataset must be nested.
pub fn nargp_fit(mfdata: &MultiFidelityDataset, opt: &OptConfig, nested: bool) -> Result<NARGPModel> {
    nargp_fit_with(&KernelSpec::squared_exponential(mfdata.dim()), mfdata, opt, nested, None)
}

pub fn nargp_fit_with(
    spec: &KernelSpec,
    mfdata: &MultiFidelityDataset,
    opt: &OptConfig,
    nested: bool,
    level1: Option<TrainedGP>,
) -> Result<NARGPModel> {
    if nested {
        mfdata.require_nested()?;
    }
    let level1 = match level1 {
        Some(g) => g,
        None => fit_gp(spec, &mfdata.levels[0], opt)?,
    };
    let mut model = NARGPModel { level1, levels: Vec::new(), seed: opt.seed };
    let kernel = CompositeKernel::from_spec(spec);
    for t in 1..mfdata.n_levels() {
        let data = &mfdata.levels[t];
        let m_prev = model.plug_in_mean(&data.x, t - 1)?;
        let x_aug = augment(&data.x, &m_prev);
        let (is, os) = if opt.standardize {
            (InputScaling::unit_box(&x_aug), OutputScaling::standardize(&data.y))
        } else {
            (InputScaling::identity(x_aug.ncols()), OutputScaling::identity())
        };
        let xs = is.apply(&x_aug);
        let ys = os.apply(&data.y);
        let h = constant_basis(data.len());
        let (posterior, _) = ExactProblem::new(&kernel, &xs, &ys, &h)?.fit(opt, &[])?;
        model.levels.push(NargpLevel { kernel: kernel.clone(), input_scaling: is, output_scaling: os, posterior });
    }
    Ok(model)
}

pub fn nargp_predict(model: &NARGPModel, xq: &DMatrix<f64>, n_samples: usize) -> Result<PosteriorPrediction> {
    model.predict(xq, n_samples)
}
