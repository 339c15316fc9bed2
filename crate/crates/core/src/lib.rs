//! Design and analysis engine for multi-regional clinical trials under the
//! random effects model.
//!
//! - [`design`]: overall sample size, regional consistency probability and its bounds.
//! - [`model`]: pooled and shrinkage estimators, moment estimator of heterogeneity.
//! - [`endpoints`]: variance scales for continuous, binary and survival endpoints.
//! - [`survival`]: Kaplan-Meier, Nelson-Aalen, RMST estimation and a two-group Cox fit.
//! - [`analysis`]: re-analysis of a completed trial from regional summaries.
//! - [`sim`]: three-step Monte Carlo verification of a design.

pub mod analysis;
pub mod design;
pub mod endpoints;
pub mod error;
pub mod model;
pub mod numerics;
pub mod sim;
pub mod survival;

pub use error::{MrctError, Result};
pub use numerics::Probability;
