//! Policy learning with Wasserstein gradient flows.
//!
//! * [`env`]: native control tasks and rollouts.
//! * [`indirect`]: flows over policy parameters (IP-WGF, SVPG at `eps = 0`).
//! * [`replay`], [`direct`]: energy-based policies with flows over action particles
//!   (DP-WGF and its value-network variant DP-WGF-V).
//!
//! Everything here is `f64`; the generic core is instantiated through its aliases.

pub mod direct;
pub mod env;
pub mod error;
pub mod indirect;
pub mod replay;

pub use env::{rollout, Env, EnvName, EnvSpec, StepOutcome, Trajectory, Transition};
pub use error::{Result, RlError};
