//! Exact single-fidelity GP regression with a constant mean.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::exact::{constant_basis, ExactPosterior, ExactProblem};
use crate::kernels::{HyperParams, KernelSpec};
use crate::linalg::Factor;
use crate::optim::OptConfig;
use crate::scaling::{InputScaling, OutputScaling};

/// Inputs (one row per point) and scalar outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(contract("a dataset needs at least one point and one input dimension"));
        }
        if x.nrows() != y.len() {
            return Err(contract(format!("X has {} rows but y has {} entries", x.nrows(), y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(contract("dataset contains non-finite values"));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// Predictive marginals at a set of query points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPrediction {
    pub mean: DVector<f64>,
    /// Latent variance; observation noise is not included.
    pub variance: DVector<f64>,
    pub covariance: Option<DMatrix<f64>>,
    /// Monte-Carlo standard error of `mean` for sampled posteriors.
    pub mc_std_error: Option<DVector<f64>>,
}

impl PosteriorPrediction {
    pub fn gaussian(mean: DVector<f64>, variance: DVector<f64>) -> Self {
        Self { mean, variance, covariance: None, mc_std_error: None }
    }

    pub fn std(&self) -> DVector<f64> {
        self.variance.map(f64::sqrt)
    }
}

fn gp_problem<'a>(
    spec: &'a KernelSpec,
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    h: &'a DMatrix<f64>,
) -> Result<ExactProblem<'a, KernelSpec>> {
    ExactProblem::new(spec, x, y, h)
}

/// Negative log marginal likelihood of `data` under `hp` (no standardization).
pub fn nlml(spec: &KernelSpec, hp: &HyperParams, data: &Dataset) -> Result<f64> {
    let h = constant_basis(data.len());
    gp_problem(spec, &data.x, &data.y, &h)?.value(&hp.to_gp_params(spec))
}

/// Gradient of [`nlml`] over `[log_variance, shape..., log_noise, mean_const]`.
pub fn nlml_grad(spec: &KernelSpec, hp: &HyperParams, data: &Dataset) -> Result<Vec<f64>> {
    let h = constant_basis(data.len());
    Ok(gp_problem(spec, &data.x, &data.y, &h)?.value_grad(&hp.to_gp_params(spec))?.1)
}

/// A fitted exact GP. Hyperparameters live in the standardized coordinates.
#[derive(Debug, Clone)]
pub struct TrainedGP {
    pub spec: KernelSpec,
    pub hp: HyperParams,
    pub x_train: DMatrix<f64>,
    pub input_scaling: InputScaling,
    pub output_scaling: OutputScaling,
    pub nlml_value: f64,
    /// NLML at each accepted optimizer iterate of the winning restart.
    pub trace: Vec<f64>,
    posterior: ExactPosterior<KernelSpec>,
}

impl TrainedGP {
    /// Conditions a GP on `data` at fixed hyperparameters and scalings.
    pub fn from_hyperparams(
        spec: &KernelSpec,
        hp: &HyperParams,
        data: &Dataset,
        input_scaling: InputScaling,
        output_scaling: OutputScaling,
    ) -> Result<Self> {
        let xs = input_scaling.apply(&data.x);
        let ys = output_scaling.apply(&data.y);
        let h = constant_basis(data.len());
        let posterior = gp_problem(spec, &xs, &ys, &h)?.condition(&hp.to_gp_params(spec))?;
        Ok(Self {
            spec: spec.clone(),
            hp: hp.clone(),
            x_train: data.x.clone(),
            input_scaling,
            output_scaling,
            nlml_value: posterior.nlml,
            trace: Vec::new(),
            posterior,
        })
    }

    /// Lower factor of `K + noise * I` in standardized coordinates.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.posterior.factor.l
    }

    pub fn factor(&self) -> &Factor {
        &self.posterior.factor
    }

    /// `(K + noise * I)^-1 (y - mean)` in standardized coordinates.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.posterior.alpha
    }

    pub fn posterior(&self) -> &ExactPosterior<KernelSpec> {
        &self.posterior
    }

    /// Free hyperparameters: kernel parameters, noise, constant mean.
    pub fn n_hyperparams(&self) -> usize {
        self.spec.n_kernel_params() + 2
    }

    /// Hyperparameters expressed in the original input and output units.
    pub fn original_hyperparams(&self) -> HyperParams {
        let s = &self.output_scaling;
        let mut hp = self.hp.clone();
        let ln_var = 2.0 * s.std.ln();
        hp.log_variance += ln_var;
        hp.log_noise += ln_var;
        hp.mean_const = hp.mean_const * s.std + s.mean;
        for k in 0..hp.log_inv_lengthscales.len() {
            hp.log_inv_lengthscales[k] -= hp.exponents[k] * self.input_scaling.scale[k].ln();
        }
        hp
    }

    /// Observation-noise variance in original output units.
    pub fn noise_variance(&self) -> f64 {
        self.hp.noise() * self.output_scaling.std.powi(2)
    }

    /// Prior signal variance in original output units.
    pub fn signal_variance(&self) -> f64 {
        self.hp.variance() * self.output_scaling.std.powi(2)
    }

    fn check_query(&self, xq: &DMatrix<f64>) -> Result<()> {
        if xq.ncols() != self.x_train.ncols() {
            return Err(contract(format!(
                "query has {} columns, model was trained on {}",
                xq.ncols(),
                self.x_train.ncols()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, xq: &DMatrix<f64>) -> Result<PosteriorPrediction> {
        self.check_query(xq)?;
        let xs = self.input_scaling.apply(xq);
        let (m, v) = self.posterior.predict(&xs, &constant_basis(xq.nrows()))?;
        Ok(PosteriorPrediction::gaussian(self.output_scaling.invert_mean(&m), self.output_scaling.invert_var(&v)))
    }

    /// Prediction including the full posterior covariance.
    pub fn predict_full(&self, xq: &DMatrix<f64>) -> Result<PosteriorPrediction> {
        self.check_query(xq)?;
        let xs = self.input_scaling.apply(xq);
        let (m, c) = self.posterior.predict_full(&xs, &constant_basis(xq.nrows()))?;
        let s2 = self.output_scaling.std.powi(2);
        let c = c * s2;
        Ok(PosteriorPrediction {
            mean: self.output_scaling.invert_mean(&m),
            variance: c.diagonal(),
            covariance: Some(c),
            mc_std_error: None,
        })
    }
}

/// Scalings used by `fit_gp` for `data` under `opt`.
pub fn scalings_for(data: &Dataset, opt: &OptConfig) -> (InputScaling, OutputScaling) {
    if opt.standardize {
        (InputScaling::unit_box(&data.x), OutputScaling::standardize(&data.y))
    } else {
        (InputScaling::identity(data.dim()), OutputScaling::identity())
    }
}

/// Maximum-likelihood GP fit by multi-start BFGS.
pub fn fit_gp(spec: &KernelSpec, data: &Dataset, opt: &OptConfig) -> Result<TrainedGP> {
    if data.dim() != spec.input_dim {
        return Err(contract(format!(
            "data has {} input columns, kernel expects {}",
            data.dim(),
            spec.input_dim
        )));
    }
    let (is, os) = scalings_for(data, opt);
    let xs = is.apply(&data.x);
    let ys = os.apply(&data.y);
    let h = constant_basis(data.len());
    let problem = gp_problem(spec, &xs, &ys, &h)?;
    let (posterior, res) = problem.fit(opt, &[])?;
    Ok(TrainedGP {
        spec: spec.clone(),
        hp: HyperParams::from_gp_params(spec, &res.x),
        x_train: data.x.clone(),
        input_scaling: is,
        output_scaling: os,
        nlml_value: res.f,
        trace: res.trace,
        posterior,
    })
}

pub fn predict_gp(model: &TrainedGP, xq: &DMatrix<f64>) -> Result<PosteriorPrediction> {
    model.predict(xq)
}
