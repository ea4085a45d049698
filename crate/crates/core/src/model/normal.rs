//! Test-unaware comparison model: normal latent incidence with
//! multiplicative noise and a negative-binomial emission without a test
//! covariate.
//!
//! Incidence stays log-transformed for positivity even though its
//! conditional law is normal; the density is evaluated at the natural-scale
//! value so the `sd = mean * psi` construction stays valid.

use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::model::NormalModelConfig;
use crate::sampler::LogDensity;
use crate::stats::neg_binom_ln_pmf;

const LOG_BOUND: f64 = 600.0;

fn normal_lpdf(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - 0.5 * z * z
}

/// One point of the test-unaware model in unconstrained coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalState {
    pub log_incidence: Vec<f64>,
    pub log_r: Vec<f64>,
    pub log_sigma: f64,
    pub log_psi: f64,
    pub log_alpha: f64,
    /// Log of 1/phi; the over-dispersion parameter itself is `exp(-log_inv_phi)`.
    pub log_inv_phi: f64,
    pub log_lambda: f64,
}

impl NormalState {
    pub fn dim(seed_len: usize, horizon: usize) -> usize {
        seed_len + 1 + 2 * horizon + 5
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.log_incidence.len() + self.log_r.len() + 5);
        v.extend_from_slice(&self.log_incidence);
        v.extend_from_slice(&self.log_r);
        v.extend_from_slice(&[
            self.log_sigma,
            self.log_psi,
            self.log_alpha,
            self.log_inv_phi,
            self.log_lambda,
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
        Ok(NormalState {
            log_incidence: x[..seeded + horizon].to_vec(),
            log_r: x[seeded + horizon..seeded + 2 * horizon].to_vec(),
            log_sigma: scalars[0],
            log_psi: scalars[1],
            log_alpha: scalars[2],
            log_inv_phi: scalars[3],
            log_lambda: scalars[4],
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
        for s in ["sigma", "psi", "alpha", "inv_phi", "lambda"] {
            names.push(s.to_string());
        }
        names
    }
}

/// Precomputed evaluation context for one data set.
pub struct NormalModel {
    config: NormalModelConfig,
    gen_by_lag: Vec<f64>,
    rep_by_lag: Vec<f64>,
    cases: Vec<u64>,
}

impl NormalModel {
    pub fn new(config: NormalModelConfig) -> Result<Self> {
        config.validate()?;
        let horizon = config.horizon();
        let max_lag = horizon + config.priors.seed_len;
        let gen_by_lag = (0..=max_lag).map(|l| config.generation.lag_weight(l)).collect();
        let rep_by_lag = (0..=max_lag).map(|l| config.latent_delay.lag_weight(l)).collect();
        let cases = config.series.cases.clone();
        Ok(NormalModel { config, gen_by_lag, rep_by_lag, cases })
    }

    pub fn config(&self) -> &NormalModelConfig {
        &self.config
    }

    fn renewal_load(&self, incidence: &[f64], t: usize) -> f64 {
        let grid_t = t + self.config.priors.seed_len;
        (0..grid_t).map(|j| incidence[j] * self.gen_by_lag[grid_t - j]).sum()
    }

    /// Reporting load excluding lag 0: cases cannot come from same-step
    /// incidence in this model.
    fn reporting_load_lagged(&self, incidence: &[f64], t: usize) -> f64 {
        let grid_t = t + self.config.priors.seed_len;
        (0..grid_t).map(|j| incidence[j] * self.rep_by_lag[grid_t - j]).sum()
    }

    /// Emission means `alpha * sum_{s<t} d_{t-s} I_s` for `t = 1..=T`.
    pub fn emission_means(&self, incidence: &[f64], alpha: f64) -> Vec<f64> {
        (1..=self.config.horizon())
            .map(|t| alpha * self.reporting_load_lagged(incidence, t))
            .collect()
    }

    pub fn eval(&self, x: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let p = &self.config.priors;
        let horizon = self.config.horizon();
        let seeded = p.seeded_count();
        let n_inc = seeded + horizon;
        debug_assert_eq!(x.len(), self.dim());

        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > LOG_BOUND) {
            return f64::NEG_INFINITY;
        }

        let incidence: Vec<f64> = x[..n_inc].iter().map(|v| v.exp()).collect();
        let log_r = &x[n_inc..n_inc + horizon];
        let repro: Vec<f64> = log_r.iter().map(|v| v.exp()).collect();
        let scalars = &x[n_inc + horizon..];
        let (log_sigma, log_psi, log_alpha, log_inv_phi, log_lambda) =
            (scalars[0], scalars[1], scalars[2], scalars[3], scalars[4]);
        let sigma = log_sigma.exp();
        let psi = log_psi.exp();
        let alpha = log_alpha.exp();
        let inv_phi = log_inv_phi.exp();
        let phi = (-log_inv_phi).exp();
        let lambda = log_lambda.exp();

        let mut logp = 0.0;

        logp += p.eta.ln() - p.eta * lambda + log_lambda;
        for j in 0..seeded {
            logp += log_lambda - lambda * incidence[j] + x[j];
        }

        let mut cond_mean = vec![0.0; horizon];
        let mut resid = vec![0.0; horizon];
        for t in 1..=horizon {
            let j = seeded + t - 1;
            let m = repro[t - 1] * self.renewal_load(&incidence, t);
            if !(m > 0.0) || !m.is_finite() {
                return f64::NEG_INFINITY;
            }
            cond_mean[t - 1] = m;
            resid[t - 1] = incidence[j] - m;
            let sd = m * psi;
            logp += -0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln()
                - 0.5 * (resid[t - 1] / sd).powi(2)
                + x[j];
        }

        logp += normal_lpdf(log_r[0], p.mu_r1, p.sigma_r1);
        for t in 2..=horizon {
            logp += normal_lpdf(log_r[t - 1], log_r[t - 2], sigma);
        }

        let mut emission_mean = vec![0.0; horizon];
        let mut emission_factor = vec![0.0; horizon];
        for t in 1..=horizon {
            let y = alpha * self.reporting_load_lagged(&incidence, t);
            emission_mean[t - 1] = y;
            logp += neg_binom_ln_pmf(self.cases[t - 1], y, phi);
            emission_factor[t - 1] = if y > 0.0 {
                let o = self.cases[t - 1] as f64;
                o / y - (phi + o) / (phi + y)
            } else {
                0.0
            };
        }

        // Priors on the scalars; each positive parameter carries its log
        // Jacobian, truncation constants dropped.
        logp += normal_lpdf(sigma, p.mu_sigma, p.sigma_sigma) + log_sigma;
        logp += normal_lpdf(psi, p.mu_psi, p.sigma_psi) + log_psi;
        logp += normal_lpdf(alpha, p.mu_alpha, p.sigma_alpha) + log_alpha;
        logp += normal_lpdf(inv_phi, p.mu_inv_phi, p.sigma_inv_phi) + log_inv_phi;

        if !logp.is_finite() {
            if let Some(g) = grad.as_deref_mut() {
                g.fill(0.0);
            }
            return f64::NEG_INFINITY;
        }

        if let Some(g) = grad {
            let psi2 = psi * psi;
            // d/dm of the latent normal log-density at each step.
            let dmean: Vec<f64> = (0..horizon)
                .map(|i| {
                    let m = cond_mean[i];
                    let e = resid[i];
                    -1.0 / m + e / (psi2 * m * m) + e * e / (psi2 * m * m * m)
                })
                .collect();

            for j in 0..n_inc {
                let mut acc = if j < seeded {
                    1.0 - lambda * incidence[j]
                } else {
                    let t = j - seeded + 1;
                    1.0 - incidence[j] * resid[t - 1] / (psi2 * cond_mean[t - 1] * cond_mean[t - 1])
                };
                let t_low = if j < seeded { 1 } else { j - seeded + 2 };
                for t in t_low..=horizon {
                    let lag = seeded - 1 + t - j;
                    let w_gen = self.gen_by_lag[lag];
                    if w_gen > 0.0 {
                        acc += dmean[t - 1] * repro[t - 1] * w_gen * incidence[j];
                    }
                    let w_rep = self.rep_by_lag[lag];
                    if w_rep > 0.0 {
                        acc += emission_factor[t - 1] * alpha * w_rep * incidence[j];
                    }
                }
                g[j] = acc;
            }

            for t in 1..=horizon {
                let mut acc = dmean[t - 1] * cond_mean[t - 1];
                if t == 1 {
                    acc += -(log_r[0] - p.mu_r1) / (p.sigma_r1 * p.sigma_r1);
                } else {
                    acc += -(log_r[t - 1] - log_r[t - 2]) / (sigma * sigma);
                }
                if t < horizon {
                    acc += (log_r[t] - log_r[t - 1]) / (sigma * sigma);
                }
                g[n_inc + t - 1] = acc;
            }

            let s0 = n_inc + horizon;
            // sigma: random-walk scale plus truncated-normal prior.
            let mut acc = 1.0 - sigma * (sigma - p.mu_sigma) / (p.sigma_sigma * p.sigma_sigma);
            for t in 2..=horizon {
                let diff = log_r[t - 1] - log_r[t - 2];
                acc += diff * diff / (sigma * sigma) - 1.0;
            }
            g[s0] = acc;

            // psi: multiplicative-noise scale.
            let mut acc = 1.0 - psi * (psi - p.mu_psi) / (p.sigma_psi * p.sigma_psi);
            for t in 1..=horizon {
                let e = resid[t - 1];
                let m = cond_mean[t - 1];
                acc += -1.0 + e * e / (psi2 * m * m);
            }
            g[s0 + 1] = acc;

            // alpha: detection scaling.
            let mut acc = 1.0 - alpha * (alpha - p.mu_alpha) / (p.sigma_alpha * p.sigma_alpha);
            for t in 1..=horizon {
                acc += emission_factor[t - 1] * emission_mean[t - 1];
            }
            g[s0 + 2] = acc;

            // inv_phi: the emission depends on phi = 1/inv_phi, so the chain
            // rule contributes a factor of -phi.
            let mut acc = 1.0 - inv_phi * (inv_phi - p.mu_inv_phi) / (p.sigma_inv_phi * p.sigma_inv_phi);
            for t in 1..=horizon {
                let y = emission_mean[t - 1];
                if y > 0.0 {
                    let o = self.cases[t - 1] as f64;
                    let dphi = digamma(o + phi) - digamma(phi) + phi.ln() + 1.0
                        - (phi + y).ln()
                        - (phi + o) / (phi + y);
                    acc += dphi * (-phi);
                }
            }
            g[s0 + 3] = acc;

            let seeded_sum: f64 = incidence[..seeded].iter().sum();
            g[s0 + 4] = 1.0 + seeded as f64 - p.eta * lambda - lambda * seeded_sum;
        }

        logp
    }
}

impl LogDensity for NormalModel {
    fn dim(&self) -> usize {
        self.config.dim()
    }

    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(position, Some(grad))
    }

    fn parameter_names(&self) -> Vec<String> {
        NormalState::names(self.config.priors.seed_len, self.config.horizon())
    }
}

pub fn log_posterior_normal(state: &NormalState, config: &NormalModelConfig) -> Result<f64> {
    let model = NormalModel::new(config.clone())?;
    let x = state.to_vec();
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} coordinates, model wants {}",
            x.len(),
            model.dim()
        )));
    }
    Ok(model.eval(&x, None))
}

pub fn grad_log_posterior_normal(
    state: &NormalState,
    config: &NormalModelConfig,
) -> Result<Vec<f64>> {
    let model = NormalModel::new(config.clone())?;
    let x = state.to_vec();
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} coordinates, model wants {}",
            x.len(),
            model.dim()
        )));
    }
    let mut grad = vec![0.0; x.len()];
    model.eval(&x, Some(&mut grad));
    Ok(grad)
}
