//! Joint Bayesian nonparametric segmentation of multiple related time series
//! into a shared library of vector-autoregressive behaviors.
//!
//! Each series owns a binary feature vector selecting a subset of globally
//! shared VAR(r) behaviors; a beta-process prior (realized through the Indian
//! buffet process predictive) governs how behaviors are shared. Inference is
//! MCMC: Metropolis-Hastings flips for shared features, birth/death
//! reversible-jump moves for series-unique features, block sampling of mode
//! sequences by backward message passing, and conjugate updates for transition
//! variables and VAR parameters.
//!
//! The crate is generic over the scalar type via [`num::Scalar`]; `f64` is the
//! default used by the CLI and the type aliases at the crate root.

pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod hyper;
pub mod io;
pub mod messages;
pub mod model;
pub mod num;
pub mod params;
pub mod synthetic;

pub use error::{Error, Result};
pub use num::Scalar;

/// Concrete aliases for the common double-precision instantiation.
pub type Dataset64 = model::Dataset<f64>;
pub type TimeSeries64 = model::TimeSeries<f64>;
pub type BehaviorLibrary64 = model::BehaviorLibrary<f64>;
pub type VarBehavior64 = model::VarBehavior<f64>;
pub type MniwPrior64 = model::MniwPrior<f64>;
pub type TransitionState64 = model::TransitionState<f64>;
pub type Hyperparams64 = model::Hyperparams<f64>;
pub type SamplerState64 = model::SamplerState<f64>;

/// Single-precision aliases.
pub type Dataset32 = model::Dataset<f32>;
pub type SamplerState32 = model::SamplerState<f32>;
