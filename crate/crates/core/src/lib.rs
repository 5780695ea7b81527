//! Momentum-assisted federated policy optimization (MFPO) on simulated agents.
//!
//! The crate is organized bottom-up:
//!
//! - [`env`]: CartPole, Pendulum and a tabular chain behind a functional
//!   environment interface, plus [`env::rollout`].
//! - [`policy`]: two-layer MLP policies over flat parameter vectors with exact
//!   log-probabilities and hand-written gradients.
//! - [`estimators`]: REINFORCE and GPOMDP estimators, importance weights and
//!   batch directions.
//! - [`mfpo`]: the federated algorithm: momentum directions, local updates,
//!   aggregation, server-side adjustment and synchronization.
//! - [`baselines`]: FedAvg combined with plain policy gradient.
//! - [`oracle`]: exact `J`, `∇J` and estimator means by enumeration.
//! - [`harness`]: configuration, CSV metrics, sweeps and reports.

pub mod baselines;
pub mod env;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod mfpo;
pub mod oracle;
pub mod params;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
pub use params::ParamVector;
