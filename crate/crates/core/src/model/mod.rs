//! Joint log-densities and analytic gradients for the two latent-incidence
//! renewal models, in unconstrained coordinates.
//!
//! Both models share the same layout: a seeded incidence block (indices
//! `-n..=0`, all sampled on log scale), an observation-period incidence block
//! (`1..=T`), the log reproduction-number walk, and a handful of scalar
//! parameters. Every positively-constrained quantity is sampled as its
//! logarithm with an explicit Jacobian term, so the sampler sees an
//! unconstrained R^d target.

mod gamma;
mod normal;

pub use gamma::{grad_log_posterior_gamma, log_posterior_gamma, GammaModel};
pub use normal::{grad_log_posterior_normal, log_posterior_normal, NormalModel, NormalState};

use serde::{Deserialize, Serialize};

use crate::delay::{ContinuousDelay, DelayOffset, DiscretizedDelay};
use crate::error::{Error, Result};
use crate::series::{ObservedSeries, TimeStep};
use crate::stats::truncated_normal_mean;

/// Fixed hyperparameters of the test-aware (gamma latent) model.
///
/// Scale parameters are standard deviations, not variances. `seed_len` is the
/// seeding horizon `n`: incidence is seeded at indices `-n..=0`, so `n + 1`
/// values precede the first observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSet {
    pub mu_nu: f64,
    pub sigma_nu: f64,
    pub mu_sigma: f64,
    pub sigma_sigma: f64,
    /// Rate of the exponential hyperprior on the seeding mean.
    pub eta: f64,
    pub mu_r1: f64,
    pub sigma_r1: f64,
    pub mu_rho: f64,
    pub sigma_rho: f64,
    /// Truncated-normal (lower bound 0) location/scale for the case
    /// over-dispersion parameter.
    pub mu_kappa: f64,
    pub sigma_kappa: f64,
    /// Seeding horizon n. Zero (or omitting the field) selects the smallest
    /// horizon covering 99% of the generation-time mass at build time.
    #[serde(default)]
    pub seed_len: usize,
}

impl PriorSet {
    /// Shared simulation-study values for everything except the two
    /// surveillance-specific priors, which must be elicited per data set.
    pub fn simulation_defaults(
        mu_rho: f64,
        sigma_rho: f64,
        mu_kappa: f64,
        sigma_kappa: f64,
        seed_len: usize,
    ) -> Self {
        PriorSet {
            mu_nu: -2.0,
            sigma_nu: 0.7,
            mu_sigma: -0.66,
            sigma_sigma: 0.6,
            eta: 0.3,
            mu_r1: 0.0,
            sigma_r1: 0.75,
            mu_rho,
            sigma_rho,
            mu_kappa,
            sigma_kappa,
            seed_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scales = [
            ("sigma_nu", self.sigma_nu),
            ("sigma_sigma", self.sigma_sigma),
            ("eta", self.eta),
            ("sigma_r1", self.sigma_r1),
            ("sigma_rho", self.sigma_rho),
            ("sigma_kappa", self.sigma_kappa),
        ];
        for (name, v) in scales {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.seed_len < 1 {
            return Err(Error::InvalidConfig("seed_len must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of seeded incidence values (`n + 1`, indices `-n..=0`).
    pub fn seeded_count(&self) -> usize {
        self.seed_len + 1
    }
}

/// Priors of the test-unaware comparison model (truncated-normal random-walk
/// scale, multiplicative-noise latent normal, detection scaling `alpha`,
/// normal prior on the inverse over-dispersion).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalPriorSet {
    pub mu_sigma: f64,
    pub sigma_sigma: f64,
    pub mu_psi: f64,
    pub sigma_psi: f64,
    pub mu_alpha: f64,
    pub sigma_alpha: f64,
    /// Prior location/scale for 1/phi (inverse over-dispersion).
    pub mu_inv_phi: f64,
    pub sigma_inv_phi: f64,
    pub eta: f64,
    pub mu_r1: f64,
    pub sigma_r1: f64,
    /// Seeding horizon n; zero selects the 99%-mass default at build time.
    #[serde(default)]
    pub seed_len: usize,
}

impl NormalPriorSet {
    /// The fixed prior set used for every simulation fit.
    pub fn simulation_defaults(seed_len: usize) -> Self {
        NormalPriorSet {
            mu_sigma: 0.0,
            sigma_sigma: 0.1,
            mu_psi: 10.0,
            sigma_psi: 2.0,
            mu_alpha: 0.02,
            sigma_alpha: 0.05,
            mu_inv_phi: 10.0,
            sigma_inv_phi: 5.0,
            eta: 0.3,
            mu_r1: 0.0,
            sigma_r1: 0.2,
            seed_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scales = [
            ("sigma_sigma", self.sigma_sigma),
            ("sigma_psi", self.sigma_psi),
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_inv_phi", self.sigma_inv_phi),
            ("eta", self.eta),
            ("sigma_r1", self.sigma_r1),
        ];
        for (name, v) in scales {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("mu_psi", self.mu_psi),
            ("mu_alpha", self.mu_alpha),
            ("mu_inv_phi", self.mu_inv_phi),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive (it seeds a log-scale start point), got {v}"
                )));
            }
        }
        if self.seed_len < 1 {
            return Err(Error::InvalidConfig("seed_len must be >= 1".into()));
        }
        Ok(())
    }

    pub fn seeded_count(&self) -> usize {
        self.seed_len + 1
    }
}

/// One point of the test-aware model in unconstrained coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    /// Log incidence at grid indices `-n..=T` (length `n + 1 + T`).
    pub log_incidence: Vec<f64>,
    /// Log reproduction number at `1..=T`.
    pub log_r: Vec<f64>,
    pub log_nu: f64,
    pub log_sigma: f64,
    pub log_rho: f64,
    pub log_lambda: f64,
    pub log_kappa: f64,
}

impl ParameterState {
    pub fn dim(seed_len: usize, horizon: usize) -> usize {
        seed_len + 1 + 2 * horizon + 5
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.log_incidence.len() + self.log_r.len() + 5);
        v.extend_from_slice(&self.log_incidence);
        v.extend_from_slice(&self.log_r);
        v.extend_from_slice(&[
            self.log_nu,
            self.log_sigma,
            self.log_rho,
            self.log_lambda,
            self.log_kappa,
        ]);
        v
    }

    pub fn from_slice(seed_len: usize, horizon: usize, x: &[f64]) -> Result<Self> {
        let seeded = seed_len + 1;
        let expect = Self::dim(seed_len, horizon);
        if x.len() != expect {
            return Err(Error::DimensionMismatch(format!(
                "state has {} coordinates, expected {expect}",
                x.len()
            )));
        }
        let scalars = &x[seeded + 2 * horizon..];
        Ok(ParameterState {
            log_incidence: x[..seeded + horizon].to_vec(),
            log_r: x[seeded + horizon..seeded + 2 * horizon].to_vec(),
            log_nu: scalars[0],
            log_sigma: scalars[1],
            log_rho: scalars[2],
            log_lambda: scalars[3],
            log_kappa: scalars[4],
        })
    }

    pub fn names(seed_len: usize, horizon: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(Self::dim(seed_len, horizon));
        for t in -(seed_len as i64)..=horizon as i64 {
            names.push(format!("I[{t}]"));
        }
        for t in 1..=horizon {
            names.push(format!("R[{t}]"));
        }
        for s in ["nu", "sigma", "rho", "lambda", "kappa"] {
            names.push(s.to_string());
        }
        names
    }

    /// Round-trip through natural scale; used to check representation
    /// invariance of the log-density.
    pub fn natural_round_trip(&self) -> Self {
        let through = |v: f64| v.exp().ln();
        ParameterState {
            log_incidence: self.log_incidence.iter().map(|&v| through(v)).collect(),
            log_r: self.log_r.iter().map(|&v| through(v)).collect(),
            log_nu: through(self.log_nu),
            log_sigma: through(self.log_sigma),
            log_rho: through(self.log_rho),
            log_lambda: through(self.log_lambda),
            log_kappa: through(self.log_kappa),
        }
    }
}

/// Data plus kernels plus priors: everything fixed during a gamma-model fit.
#[derive(Debug, Clone)]
pub struct GammaModelConfig {
    pub priors: PriorSet,
    /// Generation-time weights (lag-1 support) on the series' grid.
    pub generation: DiscretizedDelay,
    /// Latent-period weights (lag-0 support) on the series' grid.
    pub latent_delay: DiscretizedDelay,
    pub series: ObservedSeries,
}

impl GammaModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        if self.generation.offset != DelayOffset::One {
            return Err(Error::InvalidConfig("generation weights must start at lag 1".into()));
        }
        if self.latent_delay.offset != DelayOffset::Zero {
            return Err(Error::InvalidConfig("latent-period weights must start at lag 0".into()));
        }
        let horizon = self.series.len();
        if horizon < 2 {
            return Err(Error::InvalidConfig("need at least 2 observed steps".into()));
        }
        if self.generation.len() < horizon || self.latent_delay.len() < horizon {
            return Err(Error::InvalidConfig(format!(
                "delay weights must cover at least the {horizon} observed steps"
            )));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.series.len()
    }

    pub fn dim(&self) -> usize {
        ParameterState::dim(self.priors.seed_len, self.horizon())
    }
}

/// As [`GammaModelConfig`] for the test-unaware model.
#[derive(Debug, Clone)]
pub struct NormalModelConfig {
    pub priors: NormalPriorSet,
    pub generation: DiscretizedDelay,
    pub latent_delay: DiscretizedDelay,
    pub series: ObservedSeries,
}

impl NormalModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        if self.generation.offset != DelayOffset::One {
            return Err(Error::InvalidConfig("generation weights must start at lag 1".into()));
        }
        if self.latent_delay.offset != DelayOffset::Zero {
            return Err(Error::InvalidConfig("latent-period weights must start at lag 0".into()));
        }
        let horizon = self.series.len();
        if horizon < 2 {
            return Err(Error::InvalidConfig("need at least 2 observed steps".into()));
        }
        if self.generation.len() < horizon || self.latent_delay.len() < horizon {
            return Err(Error::InvalidConfig(format!(
                "delay weights must cover at least the {horizon} observed steps"
            )));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.series.len()
    }

    pub fn dim(&self) -> usize {
        NormalState::dim(self.priors.seed_len, self.horizon())
    }
}

/// Serializable model description: priors plus daily-scale delay laws.
///
/// The JSON schema is fixed; unknown fields are rejected so that typos in
/// config files fail loudly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub priors: PriorSet,
    /// Daily-scale generation-time law.
    pub generation: ContinuousDelay,
    /// Daily-scale latent-period law.
    pub latent_delay: ContinuousDelay,
}

impl ModelSpec {
    /// Discretize the delay laws onto the series' grid and assemble a full
    /// model configuration. Weekly series use daily discretization first,
    /// then weekly binning.
    pub fn build(&self, series: &ObservedSeries) -> Result<GammaModelConfig> {
        let mut priors = self.priors.clone();
        if priors.seed_len == 0 {
            priors.seed_len = default_seed_len(&self.generation, series.step, 0.99)?;
        }
        let (generation, latent_delay) =
            discretize_for_series(&self.generation, &self.latent_delay, series, priors.seed_len)?;
        let config = GammaModelConfig {
            priors,
            generation,
            latent_delay,
            series: series.clone(),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Serializable description of the test-unaware model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalModelSpec {
    pub priors: NormalPriorSet,
    pub generation: ContinuousDelay,
    pub latent_delay: ContinuousDelay,
}

impl NormalModelSpec {
    pub fn build(&self, series: &ObservedSeries) -> Result<NormalModelConfig> {
        let mut priors = self.priors.clone();
        if priors.seed_len == 0 {
            priors.seed_len = default_seed_len(&self.generation, series.step, 0.99)?;
        }
        let (generation, latent_delay) =
            discretize_for_series(&self.generation, &self.latent_delay, series, priors.seed_len)?;
        let config = NormalModelConfig {
            priors,
            generation,
            latent_delay,
            series: series.clone(),
        };
        config.validate()?;
        Ok(config)
    }
}

fn discretize_for_series(
    generation: &ContinuousDelay,
    latent: &ContinuousDelay,
    series: &ObservedSeries,
    seed_len: usize,
) -> Result<(DiscretizedDelay, DiscretizedDelay)> {
    let steps = series.len() + seed_len + 1;
    match series.step {
        TimeStep::Daily => Ok((
            crate::delay::discretize(generation, steps, DelayOffset::One)?,
            crate::delay::discretize(latent, steps, DelayOffset::Zero)?,
        )),
        TimeStep::Weekly => Ok((
            crate::delay::discretize(generation, 7 * steps, DelayOffset::One)?.to_weekly(),
            crate::delay::discretize(latent, 7 * steps, DelayOffset::Zero)?.to_weekly(),
        )),
    }
}

/// Smallest weekly seeding horizon whose generation-time mass reaches
/// `mass`; used as the default `seed_len` when none is given.
pub fn default_seed_len(generation: &ContinuousDelay, step: TimeStep, mass: f64) -> Result<usize> {
    let daily = crate::delay::discretize(generation, 500, DelayOffset::One)?;
    let weights = match step {
        TimeStep::Daily => daily.weights,
        TimeStep::Weekly => daily.to_weekly().weights,
    };
    let mut cum = 0.0;
    for (i, w) in weights.iter().enumerate() {
        cum += w;
        if cum >= mass {
            return Ok(i + 1);
        }
    }
    Ok(weights.len())
}

/// A.1.3-style starting point: reproduction numbers at baseline-estimator
/// medians, incidence at the detection-prior median times observed cases
/// (floored at one), everything else at its prior mean.
pub fn initialize_real_data(
    config: &GammaModelConfig,
    baseline_medians: &[f64],
    detection_prior_median: f64,
) -> Result<ParameterState> {
    config.validate()?;
    let horizon = config.horizon();
    if baseline_medians.len() != horizon {
        return Err(Error::DimensionMismatch(format!(
            "need {horizon} baseline medians, got {}",
            baseline_medians.len()
        )));
    }
    if !(detection_prior_median > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "detection prior median must be positive, got {detection_prior_median}"
        )));
    }
    if baseline_medians.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
        return Err(Error::InvalidConfig(
            "baseline medians must be positive and finite (forward-fill gaps first)".into(),
        ));
    }
    let p = &config.priors;
    let obs_incidence: Vec<f64> = config
        .series
        .cases
        .iter()
        .map(|&o| (detection_prior_median * o as f64).max(1.0))
        .collect();
    // Seeded steps have no observations; start them at the first
    // observation-period value.
    let seeded_val = obs_incidence[0];
    let mut log_incidence = vec![seeded_val.ln(); p.seeded_count()];
    log_incidence.extend(obs_incidence.iter().map(|v| v.ln()));

    let log_r: Vec<f64> = baseline_medians.iter().map(|m| m.ln()).collect();

    Ok(ParameterState {
        log_incidence,
        log_r,
        log_nu: (p.mu_nu + 0.5 * p.sigma_nu * p.sigma_nu).exp().ln(),
        log_sigma: (p.mu_sigma + 0.5 * p.sigma_sigma * p.sigma_sigma).exp().ln(),
        log_rho: (p.mu_rho + 0.5 * p.sigma_rho * p.sigma_rho).exp().ln(),
        log_lambda: (1.0 / p.eta).ln(),
        log_kappa: truncated_normal_mean(p.mu_kappa, p.sigma_kappa).ln(),
    })
}

/// Counterpart of [`initialize_real_data`] for the test-unaware model.
pub fn initialize_normal(
    config: &NormalModelConfig,
    baseline_medians: &[f64],
    detection_prior_median: f64,
) -> Result<NormalState> {
    config.validate()?;
    let horizon = config.horizon();
    if baseline_medians.len() != horizon {
        return Err(Error::DimensionMismatch(format!(
            "need {horizon} baseline medians, got {}",
            baseline_medians.len()
        )));
    }
    if !(detection_prior_median > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "detection prior median must be positive, got {detection_prior_median}"
        )));
    }
    let p = &config.priors;
    let obs_incidence: Vec<f64> = config
        .series
        .cases
        .iter()
        .map(|&o| (detection_prior_median * o as f64).max(1.0))
        .collect();
    let seeded_val = obs_incidence[0];
    let mut log_incidence = vec![seeded_val.ln(); p.seeded_count()];
    log_incidence.extend(obs_incidence.iter().map(|v| v.ln()));

    Ok(NormalState {
        log_incidence,
        log_r: baseline_medians.iter().map(|m| m.ln()).collect(),
        log_sigma: truncated_normal_mean(p.mu_sigma, p.sigma_sigma).ln(),
        log_psi: p.mu_psi.ln(),
        log_alpha: p.mu_alpha.ln(),
        log_inv_phi: p.mu_inv_phi.ln(),
        log_lambda: (1.0 / p.eta).ln(),
    })
}
