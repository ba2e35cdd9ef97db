//! Fits one method on one repetition's data and predicts the top fidelity.

use mfgp::mf::ar1::{ar1_fit_coupled, ar1_fit_recursive};
use mfgp::mf::{lmc_fit, mfdgp_fit_with, nargp_fit, MultiFidelityDataset};
use mfgp::{fit_gp, KernelSpec, OptConfig, PosteriorPrediction};
use nalgebra::DMatrix;

use crate::config::{ExperimentConfig, Method};

/// Top-fidelity prediction of a fitted model.
pub struct Fitted {
    pub prediction: PosteriorPrediction,
    pub n_hyperparams: usize,
}

/// LMC uses two latent groups of rank one.
const LMC_GROUPS: usize = 2;

pub fn fit_predict(
    method: Method,
    data: &MultiFidelityDataset,
    xq: &DMatrix<f64>,
    config: &ExperimentConfig,
    seed: u64,
) -> mfgp::Result<Fitted> {
    let opt = OptConfig { seed, ..config.optimizer_for(method).clone() };
    let top = data.n_levels() - 1;
    match method {
        Method::GpHf => {
            let gp = fit_gp(&KernelSpec::squared_exponential(data.dim()), data.top(), &opt)?;
            Ok(Fitted { prediction: gp.predict(xq)?, n_hyperparams: gp.n_hyperparams() })
        }
        Method::Lmc => {
            let m = lmc_fit(data, LMC_GROUPS, &[1; LMC_GROUPS], &opt)?;
            Ok(Fitted { prediction: m.predict(xq, top)?, n_hyperparams: m.n_hyperparams() })
        }
        Method::Ar1 if data.n_levels() == 2 => {
            let m = ar1_fit_coupled(data, &opt)?;
            Ok(Fitted { prediction: m.predict(xq)?, n_hyperparams: m.n_hyperparams() })
        }
        Method::Ar1 => {
            let m = ar1_fit_recursive(data, &opt)?;
            Ok(Fitted { prediction: m.predict(xq)?, n_hyperparams: m.n_hyperparams() })
        }
        Method::Nargp | Method::NargpNested => {
            let m = nargp_fit(data, &opt, method == Method::NargpNested)?;
            Ok(Fitted { prediction: m.predict(xq, config.n_samples)?, n_hyperparams: m.n_hyperparams() })
        }
        Method::Mfdgp => {
            let m = mfdgp_fit_with(&KernelSpec::squared_exponential(data.dim()), data, &opt, &config.mfdgp)?;
            Ok(Fitted { prediction: m.predict(xq, config.n_samples)?, n_hyperparams: m.n_hyperparams() })
        }
    }
}
