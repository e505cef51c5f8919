//! Particle approximations of Wasserstein gradient flows.
//!
//! The crate is organised bottom-up:
//!
//! * [`ensemble`], [`kernel`], [`gradient`] hold the particle representation and the
//!   two particle-gradient formulas (kernelised KL term and the entropic W2 term).
//! * [`jko`] combines them into one minimizing-movement step; [`langevin`] and
//!   [`transport`] are the independent samplers/solvers used to check it.
//! * [`optim`] and [`mlp`] provide the small amount of neural-network machinery the
//!   policy and regression experiments need.
//! * [`targets`], [`bnn`] and [`dataset`] supply target log-densities and data.
//!
//! All numerical code is generic over [`Scalar`]; the aliases at the crate root fix
//! the scalar to `f64`, which is what the experiments use.

pub mod bnn;
pub mod checkpoint;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod gradient;
pub mod jko;
pub mod kernel;
pub mod langevin;
pub mod mlp;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod targets;
pub mod transport;

pub use error::{FlowError, Result};
pub use scalar::Scalar;

pub use ensemble::ParticleEnsemble;
pub use gradient::{kl_gradient, kl_gradient_from_scores, w2_gradient, ScoreField};
pub use jko::{jko_step, JkoConfig, JkoOutcome, ScaleRule};
pub use kernel::{median_bandwidth, rbf_kernel, Bandwidth, KernelSpec};
pub use langevin::langevin_step;
pub use mlp::{Activation, FlatView, ForwardCache, MlpParams};
pub use optim::{OptimizerKind, OptimizerSpec, OptimizerState};
pub use targets::{GaussianMixture, LogDensity};
pub use transport::{entropic_plan, exact_w2_squared, TransportPlan};

/// Particle ensemble over `f64`.
pub type Ensemble = ParticleEnsemble<f64>;
/// Network parameters over `f64`.
pub type Mlp = MlpParams<f64>;
/// Flat parameter vector over `f64`.
pub type Flat = FlatView<f64>;
/// JKO configuration over `f64`.
pub type Jko = JkoConfig<f64>;
/// Optimizer state over `f64`.
pub type Optimizer = OptimizerState<f64>;
/// Diagonal Gaussian mixture over `f64`.
pub type Mixture = GaussianMixture<f64>;
/// Entropic transport plan over `f64`.
pub type Plan = TransportPlan<f64>;
