//! SyMPLER: a continual-learning piecewise-linear regressor for nonstationary
//! time series.
//!
//! The network is a growing committee of local linear models. A new model is
//! trained whenever the committee's running error exceeds that of the naïve
//! delayed predictor for long enough to fill a buffer whose size comes from a
//! VC generalization bound. Prediction switches between models by distance to
//! their approximation points.
//!
//! Modules:
//! - [`vc_bounds`]: minimum training sizes from the VC risk bound.
//! - [`learner`]: the streaming learner, local-model fitting and selection.
//! - [`baselines`]: naïve, offline ridge and linearized pendulum references.
//! - [`pendulum`]: pendulum simulator, Taylor oracle and experiment drivers.
//! - [`eval`]: warmup/update/evaluation protocol and its metrics.
//! - [`io`]: CSV ingestion, standardization stats, snapshots and traces.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod eval;
pub mod io;
pub mod learner;
mod linalg;
pub mod pendulum;
pub mod vc_bounds;

pub use error::{Error, Result};
pub use learner::{
    fit_local_model, DiscardOrder, Explanation, LearnerConfig, LocalModel, Sample, Selection,
    StepOutcome, SymplerLearner,
};
