//! Chained Gaussian processes.
//!
//! Several independent sparse variational GP latents are pushed through
//! non-linear transformations into the parameters of an arbitrary factorized
//! likelihood. Inference maximizes a variational lower bound whose data term
//! splits into per-datum two-dimensional Gaussian expectations, computed by
//! nested Gauss-Hermite quadrature (or Monte Carlo), so the bound can be
//! optimized stochastically on minibatches.

pub mod error;
pub mod fit;
pub mod harness;
pub mod init;
pub mod kernels;
pub mod data;
pub mod datagen;
pub mod likelihoods;
pub mod model;
pub mod quadrature;
pub mod special;
pub mod svgp;

pub use error::{Error, Result};
pub use fit::{fit, TrainConfig};
pub use kernels::KernelSpec;
pub use data::Dataset;
pub use likelihoods::{Likelihood, LikelihoodFamily, Transformation};
pub use model::ChainedModel;
pub use quadrature::{GaussHermiteRule, Integrator, McRule};
