//! Effective reproduction number estimation from case and test time series.
//!
//! The centerpiece is a latent-incidence renewal model whose surveillance
//! layer treats administered diagnostic tests as a covariate, fit with a
//! gradient-based no-U-turn sampler. Around it sit the classic
//! window-posterior estimator and its GLM mimics, prior-elicitation
//! procedures for the surveillance parameters, a stochastic SEIR simulator
//! with configurable testing scenarios, and frequentist evaluation metrics.

pub mod baselines;
pub mod delay;
pub mod elicit;
pub mod error;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod seir;
pub mod series;
pub mod stats;

mod optim;

pub use error::{Error, Result};
