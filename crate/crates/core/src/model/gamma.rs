//! Test-aware renewal model: gamma latent incidence, negative-binomial
//! emission with administered tests as a covariate.

use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::model::{GammaModelConfig, ParameterState};
use crate::sampler::LogDensity;
use crate::stats::neg_binom_ln_pmf;

/// Coordinates above this magnitude (log scale) are rejected outright to keep
/// exp() finite.
const LOG_BOUND: f64 = 600.0;

fn normal_lpdf(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - 0.5 * z * z
}

/// Precomputed evaluation context for one data set.
pub struct GammaModel {
    config: GammaModelConfig,
    /// Generation weight by lag; index 0 is zero (lag-1 support).
    gen_by_lag: Vec<f64>,
    /// Latent-period weight by lag, including lag 0.
    rep_by_lag: Vec<f64>,
    tests: Vec<f64>,
    cases: Vec<u64>,
}

impl GammaModel {
    pub fn new(config: GammaModelConfig) -> Result<Self> {
        config.validate()?;
        let horizon = config.horizon();
        let max_lag = horizon + config.priors.seed_len;
        let gen_by_lag = (0..=max_lag).map(|l| config.generation.lag_weight(l)).collect();
        let rep_by_lag = (0..=max_lag).map(|l| config.latent_delay.lag_weight(l)).collect();
        let tests = config.series.tests.iter().map(|&m| m as f64).collect();
        let cases = config.series.cases.clone();
        Ok(GammaModel { config, gen_by_lag, rep_by_lag, tests, cases })
    }

    pub fn config(&self) -> &GammaModelConfig {
        &self.config
    }

    /// Renewal load `Lambda_t` (t is 1-based) for a natural-scale incidence
    /// grid starting at index `-n`.
    pub fn renewal_load(&self, incidence: &[f64], t: usize) -> f64 {
        let grid_t = t + self.config.priors.seed_len;
        (0..grid_t).map(|j| incidence[j] * self.gen_by_lag[grid_t - j]).sum()
    }

    /// Reporting load `D_t`, which includes the lag-0 contribution.
    pub fn reporting_load(&self, incidence: &[f64], t: usize) -> f64 {
        let grid_t = t + self.config.priors.seed_len;
        (0..=grid_t).map(|j| incidence[j] * self.rep_by_lag[grid_t - j]).sum()
    }

    /// Emission means `rho * M_t * D_t` for `t = 1..=T`; linear in the test
    /// counts by construction.
    pub fn emission_means(&self, incidence: &[f64], rho: f64) -> Vec<f64> {
        (1..=self.config.horizon())
            .map(|t| rho * self.tests[t - 1] * self.reporting_load(incidence, t))
            .collect()
    }

    /// Log posterior density (unnormalized) in unconstrained coordinates,
    /// optionally filling the analytic gradient.
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
        let (log_nu, log_sigma, log_rho, log_lambda, log_kappa) =
            (scalars[0], scalars[1], scalars[2], scalars[3], scalars[4]);
        let nu = log_nu.exp();
        let sigma = log_sigma.exp();
        let rho = log_rho.exp();
        let lambda = log_lambda.exp();
        let kappa = log_kappa.exp();

        let mut logp = 0.0;

        // Seeding hierarchy: lambda ~ Exp(eta), seeded I ~ Exp(lambda), with
        // log-scale Jacobians.
        logp += p.eta.ln() - p.eta * lambda + log_lambda;
        for j in 0..seeded {
            logp += log_lambda - lambda * incidence[j] + x[j];
        }

        // Latent gamma process and emission loads.
        let mut renewal = vec![0.0; horizon];
        let mut reporting = vec![0.0; horizon];
        for t in 1..=horizon {
            renewal[t - 1] = self.renewal_load(&incidence, t);
            reporting[t - 1] = self.reporting_load(&incidence, t);
        }

        // Per-step latent factors reused by several gradient blocks.
        let mut shape = vec![0.0; horizon];
        let mut gamma_factor = vec![0.0; horizon];
        for t in 1..=horizon {
            let j = seeded + t - 1;
            let a = repro[t - 1] * renewal[t - 1] * nu;
            shape[t - 1] = a;
            if !(a > 0.0) || !a.is_finite() {
                return f64::NEG_INFINITY;
            }
            gamma_factor[t - 1] = log_nu - digamma(a) + x[j];
            logp += a * log_nu - ln_gamma(a) + a * x[j] - nu * incidence[j];
        }

        // Log-scale random walk for the reproduction number.
        let step_var = sigma * sigma / (horizon.max(2) as f64 - 1.0);
        logp += normal_lpdf(log_r[0], p.mu_r1, p.sigma_r1);
        for t in 2..=horizon {
            logp += normal_lpdf(log_r[t - 1], log_r[t - 2], step_var.sqrt());
        }

        // Test-scaled negative-binomial emission.
        let mut emission_mean = vec![0.0; horizon];
        let mut emission_factor = vec![0.0; horizon];
        for t in 1..=horizon {
            let mu_t = rho * self.tests[t - 1] * reporting[t - 1];
            emission_mean[t - 1] = mu_t;
            logp += neg_binom_ln_pmf(self.cases[t - 1], mu_t, kappa);
            emission_factor[t - 1] = if mu_t > 0.0 {
                let o = self.cases[t - 1] as f64;
                o / mu_t - (kappa + o) / (kappa + mu_t)
            } else {
                0.0
            };
        }

        // Hyperpriors; the truncated-normal normalizing constant is
        // parameter-free and dropped.
        logp += normal_lpdf(log_nu, p.mu_nu, p.sigma_nu);
        logp += normal_lpdf(log_sigma, p.mu_sigma, p.sigma_sigma);
        logp += normal_lpdf(log_rho, p.mu_rho, p.sigma_rho);
        logp += -0.5 * ((kappa - p.mu_kappa) / p.sigma_kappa).powi(2)
            - 0.5 * (2.0 * std::f64::consts::PI).ln()
            - p.sigma_kappa.ln()
            + log_kappa;

        if !logp.is_finite() {
            if let Some(g) = grad.as_deref_mut() {
                g.fill(0.0);
            }
            return f64::NEG_INFINITY;
        }

        if let Some(g) = grad {
            // Incidence coordinates.
            for j in 0..n_inc {
                let mut acc = if j < seeded {
                    1.0 - lambda * incidence[j]
                } else {
                    let t = j - seeded + 1;
                    shape[t - 1] - nu * incidence[j]
                };
                let t_low = if j < seeded { 1 } else { j - seeded + 2 };
                // Downstream latent terms through the renewal load.
                for t in t_low..=horizon {
                    let lag = seeded - 1 + t - j;
                    let w = self.gen_by_lag[lag];
                    if w > 0.0 {
                        acc += nu * repro[t - 1] * w * incidence[j] * gamma_factor[t - 1];
                    }
                }
                // Emission terms through the reporting load (lag 0 allowed).
                let t_emit_low = if j < seeded { 1 } else { j - seeded + 1 };
                for t in t_emit_low..=horizon {
                    let lag = seeded - 1 + t - j;
                    let w = self.rep_by_lag[lag];
                    if w > 0.0 {
                        acc += emission_factor[t - 1] * rho * self.tests[t - 1] * w * incidence[j];
                    }
                }
                g[j] = acc;
            }

            // Reproduction-number coordinates: latent shape plus walk.
            for t in 1..=horizon {
                let mut acc = shape[t - 1] * gamma_factor[t - 1];
                if t == 1 {
                    acc += -(log_r[0] - p.mu_r1) / (p.sigma_r1 * p.sigma_r1);
                } else {
                    acc += -(log_r[t - 1] - log_r[t - 2]) / step_var;
                }
                if t < horizon {
                    acc += (log_r[t] - log_r[t - 1]) / step_var;
                }
                g[n_inc + t - 1] = acc;
            }

            let s0 = n_inc + horizon;
            // nu
            let mut acc = -(log_nu - p.mu_nu) / (p.sigma_nu * p.sigma_nu);
            for t in 1..=horizon {
                acc += shape[t - 1] * (gamma_factor[t - 1] + 1.0)
                    - nu * incidence[seeded + t - 1];
            }
            g[s0] = acc;

            // sigma
            let mut acc = -(log_sigma - p.mu_sigma) / (p.sigma_sigma * p.sigma_sigma);
            for t in 2..=horizon {
                let diff = log_r[t - 1] - log_r[t - 2];
                acc += diff * diff / step_var - 1.0;
            }
            g[s0 + 1] = acc;

            // rho
            let mut acc = -(log_rho - p.mu_rho) / (p.sigma_rho * p.sigma_rho);
            for t in 1..=horizon {
                let o = self.cases[t - 1] as f64;
                let mu_t = emission_mean[t - 1];
                acc += o - (kappa + o) * mu_t / (kappa + mu_t);
            }
            g[s0 + 2] = acc;

            // lambda
            let seeded_sum: f64 = incidence[..seeded].iter().sum();
            g[s0 + 3] = 1.0 + seeded as f64 - p.eta * lambda - lambda * seeded_sum;

            // kappa
            let mut acc = 1.0 - kappa * (kappa - p.mu_kappa) / (p.sigma_kappa * p.sigma_kappa);
            for t in 1..=horizon {
                let o = self.cases[t - 1] as f64;
                let mu_t = emission_mean[t - 1];
                if mu_t > 0.0 {
                    acc += kappa
                        * (digamma(o + kappa) - digamma(kappa) + kappa.ln() + 1.0
                            - (kappa + mu_t).ln()
                            - (kappa + o) / (kappa + mu_t));
                }
            }
            g[s0 + 4] = acc;
        }

        logp
    }
}

impl LogDensity for GammaModel {
    fn dim(&self) -> usize {
        self.config.dim()
    }

    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(position, Some(grad))
    }

    fn parameter_names(&self) -> Vec<String> {
        ParameterState::names(self.config.priors.seed_len, self.config.horizon())
    }
}

/// Unnormalized log posterior in unconstrained coordinates.
pub fn log_posterior_gamma(state: &ParameterState, config: &GammaModelConfig) -> Result<f64> {
    let model = GammaModel::new(config.clone())?;
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

/// Analytic gradient of [`log_posterior_gamma`] with respect to every
/// unconstrained coordinate.
pub fn grad_log_posterior_gamma(
    state: &ParameterState,
    config: &GammaModelConfig,
) -> Result<Vec<f64>> {
    let model = GammaModel::new(config.clone())?;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::{DelayOffset, DiscretizedDelay};
    use crate::model::PriorSet;
    use crate::series::{ObservedSeries, StartLabel, TimeStep};
    use approx::assert_abs_diff_eq;

    fn small_config(horizon: usize, seed_len: usize) -> GammaModelConfig {
        let series = ObservedSeries::new(
            StartLabel::Index(1),
            TimeStep::Weekly,
            (0..horizon).map(|t| 40 + 3 * t as u64).collect(),
            vec![1000; horizon],
        )
        .unwrap();
        let gen = DiscretizedDelay::new(
            (0..horizon + seed_len).map(|k| 0.5f64.powi(k as i32 + 1)).collect(),
            DelayOffset::One,
        )
        .unwrap();
        let lat = DiscretizedDelay::new(
            (0..horizon + seed_len + 1).map(|k| 0.6 * 0.4f64.powi(k as i32)).collect(),
            DelayOffset::Zero,
        )
        .unwrap();
        GammaModelConfig {
            priors: PriorSet::simulation_defaults(-3.0, 0.3, 30.0, 20.0, seed_len),
            generation: gen,
            latent_delay: lat,
            series,
        }
    }

    fn flat_state(config: &GammaModelConfig) -> ParameterState {
        let seeded = config.priors.seeded_count();
        ParameterState {
            log_incidence: vec![3.0; seeded + config.horizon()],
            log_r: vec![0.1; config.horizon()],
            log_nu: -2.0,
            log_sigma: -0.7,
            log_rho: -3.0,
            log_lambda: 1.0,
            log_kappa: 3.0,
        }
    }

    #[test]
    fn representation_invariance() {
        let config = small_config(5, 2);
        let state = flat_state(&config);
        let a = log_posterior_gamma(&state, &config).unwrap();
        let b = log_posterior_gamma(&state.natural_round_trip(), &config).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn emission_mean_linear_in_tests() {
        let config = small_config(4, 1);
        let model = GammaModel::new(config.clone()).unwrap();
        let state = flat_state(&config);
        let x = state.to_vec();
        let incidence: Vec<f64> = x[..config.priors.seeded_count() + 4]
            .iter()
            .map(|v| v.exp())
            .collect();
        let base = model.emission_means(&incidence, 0.01);
        let mut doubled = config.clone();
        doubled.series.tests.iter_mut().for_each(|m| *m *= 2);
        let model2 = GammaModel::new(doubled).unwrap();
        let twice = model2.emission_means(&incidence, 0.01);
        for (a, b) in base.iter().zip(&twice) {
            assert_abs_diff_eq!(2.0 * a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn walk_gradient_constant_log_r() {
        // With a constant log R path the interior walk gradient vanishes and
        // the t = 1 coordinate feels only the prior pull plus its latent term.
        let config = small_config(5, 2);
        let mut state = flat_state(&config);
        state.log_r = vec![0.4; 5];
        let grad = grad_log_posterior_gamma(&state, &config).unwrap();
        let model = GammaModel::new(config.clone()).unwrap();
        let x = state.to_vec();
        let n_inc = config.priors.seeded_count() + 5;
        let incidence: Vec<f64> = x[..n_inc].iter().map(|v| v.exp()).collect();
        let nu = state.log_nu.exp();
        for t in 1..=5usize {
            let shape = 0.4f64.exp() * model.renewal_load(&incidence, t) * nu;
            let latent_part = shape
                * (state.log_nu - statrs::function::gamma::digamma(shape)
                    + state.log_incidence[config.priors.seeded_count() + t - 1]);
            let walk_part = grad[n_inc + t - 1] - latent_part;
            if t == 1 {
                let expected = -(0.4 - config.priors.mu_r1)
                    / (config.priors.sigma_r1 * config.priors.sigma_r1);
                assert_abs_diff_eq!(walk_part, expected, epsilon = 1e-9);
            } else {
                assert_abs_diff_eq!(walk_part, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn lambda_gradient_is_local() {
        // lambda touches only the seeding block.
        let config = small_config(4, 1);
        let state = flat_state(&config);
        let grad = grad_log_posterior_gamma(&state, &config).unwrap();
        let seeded = config.priors.seeded_count();
        let lambda = state.log_lambda.exp();
        let seeded_sum: f64 = state.log_incidence[..seeded].iter().map(|v| v.exp()).sum();
        let expected = 1.0 + seeded as f64 - config.priors.eta * lambda - lambda * seeded_sum;
        let dim = state.to_vec().len();
        assert_abs_diff_eq!(grad[dim - 2], expected, epsilon = 1e-10);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let config = small_config(4, 1);
        let mut state = flat_state(&config);
        state.log_r.pop();
        assert!(log_posterior_gamma(&state, &config).is_err());
    }
}
