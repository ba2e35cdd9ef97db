//! Multi-fidelity fusion schemes.

pub mod ar1;
pub mod dataset;
pub mod lmc;
pub mod mfdgp;
pub mod nargp;
pub mod svgp;

pub use ar1::{ar1_fit_coupled, ar1_fit_recursive, ar1_predict, AR1CoupledModel, AR1Model};
pub use dataset::MultiFidelityDataset;
pub use lmc::{lmc_fit, lmc_predict, CoregionalizationModel};
pub use nargp::{nargp_fit, nargp_predict, NARGPModel};
pub use mfdgp::{mfdgp_fit, mfdgp_fit_with, mfdgp_predict, LayerKernel, MFDGPModel, MfdgpConfig};
pub use svgp::SvgpLayer;
