//! Parameter recovery for mixture-of-experts regression.
//!
//! Regressors are learned by SGD on a quartic-moment surrogate loss whose
//! local minima are global; gating parameters are then learned by projected
//! gradient descent on the log-likelihood with the regressors held fixed.
//! EM and joint least-squares SGD are provided as baselines.

pub mod baselines;
pub mod datagen;
pub mod error;
pub mod gru_bridge;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod transforms;

pub use error::{MoeError, Result};
pub use model::{Dataset, MoEParameters, NonlinearityKind, RegularizationConfig};
