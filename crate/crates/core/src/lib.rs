//! Multi-fidelity Gaussian-process surrogates.
//!
//! Single-fidelity exact GPs ([`gp`]) and four ways of fusing data from several
//! fidelity levels ([`mf`]): linear model of coregionalization, autoregressive
//! (AR1, recursive and fully coupled), non-linear autoregressive (NARGP) and a
//! multi-fidelity deep GP trained by doubly stochastic variational inference.
//! [`doe`], [`bench`] and [`metrics`] provide designs, benchmark problems and
//! scores for comparing them.

pub mod bench;
pub mod covariance;
pub mod doe;
pub mod error;
pub mod exact;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod mf;
pub mod optim;
pub mod scaling;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
pub use gp::{fit_gp, nlml, nlml_grad, predict_gp, Dataset, PosteriorPrediction, TrainedGP};
pub use kernels::{kernel_eval, kernel_grad, CompositeKernel, HyperParams, KernelFamily, KernelSpec};
pub use optim::OptConfig;
