//! Physics-informed kernel ridge regression.
//!
//! The estimator minimizes `(1/n) Σ |f(X_i) − Y_i|² + λ‖f‖²_{Hˢ} + μ‖𝒟f‖²_{L²(Ω)}`.
//! Its penalty is the squared norm of a reproducing kernel Hilbert space,
//! so the problem is kernel ridge regression with a kernel built from `𝒟`.
//! The crate builds that kernel (closed form in 1D, Fourier–Galerkin in
//! general), its spectrum and effective dimension, fits the estimator, and
//! runs convergence-rate experiments.
//!
//! Everything is generic over `f32`/`f64` through [`Real`]; the aliases
//! below fix `f64`.

// Validation is written as `!(x > 0)` on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod effdim;
pub mod eigen1d;
pub mod error;
pub mod experiment;
pub mod fourier;
pub mod io;
pub mod kernel;
pub mod operator;
pub mod quadrature;
pub mod regressor;
pub mod scalar;
pub mod spectrum;

pub use error::{Error, Result};
pub use scalar::Real;

pub type DomainSpec = fourier::DomainSpec<f64>;
pub type MultiIndexOperator = operator::MultiIndexOperator<f64>;
pub type RegularizationParams = operator::RegularizationParams<f64>;
pub type GalerkinSystem = operator::GalerkinSystem<f64>;
pub type KernelConfig = kernel::KernelConfig<f64>;
pub type Kernel = kernel::Kernel<f64>;
pub type Spectrum = spectrum::Spectrum<f64>;
pub type EffDimReport = effdim::EffDimReport<f64>;
pub type Dataset = regressor::Dataset<f64>;
pub type KernelModel = regressor::KernelModel<f64>;
pub type Scenario = experiment::Scenario<f64>;
