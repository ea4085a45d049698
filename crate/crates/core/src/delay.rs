//! Continuous delay distributions (generation time, latent period) and their
//! discretization onto the analysis grid.
//!
//! Discretization assigns bin `u` the mass `F(u + 0.5) - F(u - 0.5)` and never
//! renormalizes; mass beyond the requested horizon is simply dropped. Two
//! support conventions exist: generation-time weights start at lag 1, latent
//! period weights get an extra lag-0 bin so that cases can be generated from
//! same-interval incidence.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// A parametric delay distribution on `[0, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContinuousDelay {
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    LogNormal { log_mean: f64, log_sd: f64 },
    Weibull { shape: f64, scale: f64 },
    /// Sum of two independent exponentials; equal rates degenerate to Erlang(2).
    HypoExponential { rate1: f64, rate2: f64 },
}

impl ContinuousDelay {
    /// Log-normal with the given natural-scale mean and standard deviation.
    pub fn log_normal_from_moments(mean: f64, sd: f64) -> Result<Self> {
        if mean <= 0.0 || sd <= 0.0 {
            return Err(Error::InvalidDelay(format!(
                "log-normal moments must be positive, got mean {mean}, sd {sd}"
            )));
        }
        let log_var = (1.0 + (sd / mean).powi(2)).ln();
        Ok(ContinuousDelay::LogNormal {
            log_mean: mean.ln() - 0.5 * log_var,
            log_sd: log_var.sqrt(),
        })
    }

    /// Gamma with the given natural-scale mean and standard deviation.
    pub fn gamma_from_moments(mean: f64, sd: f64) -> Result<Self> {
        if mean <= 0.0 || sd <= 0.0 {
            return Err(Error::InvalidDelay(format!(
                "gamma moments must be positive, got mean {mean}, sd {sd}"
            )));
        }
        let shape = (mean / sd).powi(2);
        Ok(ContinuousDelay::Gamma {
            shape,
            rate: shape / mean,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ContinuousDelay::Exponential { rate } => rate > 0.0,
            ContinuousDelay::Gamma { shape, rate } => shape > 0.0 && rate > 0.0,
            ContinuousDelay::LogNormal { log_sd, .. } => log_sd > 0.0,
            ContinuousDelay::Weibull { shape, scale } => shape > 0.0 && scale > 0.0,
            ContinuousDelay::HypoExponential { rate1, rate2 } => rate1 > 0.0 && rate2 > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDelay(format!("{self:?}")))
        }
    }

    /// CDF at `x`; zero for negative arguments.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            ContinuousDelay::Exponential { rate } => 1.0 - (-rate * x).exp(),
            ContinuousDelay::Gamma { shape, rate } => {
                statrs::distribution::Gamma::new(shape, rate).unwrap().cdf(x)
            }
            ContinuousDelay::LogNormal { log_mean, log_sd } => {
                statrs::distribution::LogNormal::new(log_mean, log_sd).unwrap().cdf(x)
            }
            ContinuousDelay::Weibull { shape, scale } => {
                statrs::distribution::Weibull::new(shape, scale).unwrap().cdf(x)
            }
            ContinuousDelay::HypoExponential { rate1, rate2 } => {
                if (rate1 - rate2).abs() < 1e-12 * rate1.max(rate2) {
                    // Erlang(2, r): F(x) = 1 - e^{-rx}(1 + rx)
                    let r = 0.5 * (rate1 + rate2);
                    1.0 - (-r * x).exp() * (1.0 + r * x)
                } else {
                    1.0 - (rate2 * (-rate1 * x).exp() - rate1 * (-rate2 * x).exp())
                        / (rate2 - rate1)
                }
            }
        }
    }

    /// Analytic mean and standard deviation.
    pub fn mean_sd(&self) -> (f64, f64) {
        match *self {
            ContinuousDelay::Exponential { rate } => (1.0 / rate, 1.0 / rate),
            ContinuousDelay::Gamma { shape, rate } => (shape / rate, shape.sqrt() / rate),
            ContinuousDelay::LogNormal { log_mean, log_sd } => {
                let m = (log_mean + 0.5 * log_sd * log_sd).exp();
                (m, m * ((log_sd * log_sd).exp() - 1.0).sqrt())
            }
            ContinuousDelay::Weibull { shape, scale } => {
                let g1 = ln_gamma(1.0 + 1.0 / shape).exp();
                let g2 = ln_gamma(1.0 + 2.0 / shape).exp();
                (scale * g1, scale * (g2 - g1 * g1).max(0.0).sqrt())
            }
            ContinuousDelay::HypoExponential { rate1, rate2 } => (
                1.0 / rate1 + 1.0 / rate2,
                (1.0 / (rate1 * rate1) + 1.0 / (rate2 * rate2)).sqrt(),
            ),
        }
    }

    /// Draw one value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        use rand_distr::Distribution;
        match *self {
            ContinuousDelay::Exponential { rate } => {
                rand_distr::Exp::new(rate).unwrap().sample(rng)
            }
            ContinuousDelay::Gamma { shape, rate } => {
                rand_distr::Gamma::new(shape, 1.0 / rate).unwrap().sample(rng)
            }
            ContinuousDelay::LogNormal { log_mean, log_sd } => {
                rand_distr::LogNormal::new(log_mean, log_sd).unwrap().sample(rng)
            }
            ContinuousDelay::Weibull { shape, scale } => {
                rand_distr::Weibull::new(scale, shape).unwrap().sample(rng)
            }
            ContinuousDelay::HypoExponential { rate1, rate2 } => {
                rand_distr::Exp::new(rate1).unwrap().sample(rng)
                    + rand_distr::Exp::new(rate2).unwrap().sample(rng)
            }
        }
    }
}

/// Whether the first weight corresponds to lag 0 or lag 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayOffset {
    /// First weight is the lag-0 mass (latent-period / reporting kernel).
    Zero,
    /// First weight is the lag-1 mass (generation-time kernel).
    One,
}

/// Discretized delay weights on the analysis grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedDelay {
    pub weights: Vec<f64>,
    pub offset: DelayOffset,
}

impl DiscretizedDelay {
    pub fn new(weights: Vec<f64>, offset: DelayOffset) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDelay(
                "discretized weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::InvalidDelay(format!(
                "discretized weights sum to {total}, above 1"
            )));
        }
        Ok(Self { weights, offset })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weight at an integer lag; zero outside the stored support and at
    /// lag 0 for lag-1-offset kernels.
    pub fn lag_weight(&self, lag: usize) -> f64 {
        match self.offset {
            DelayOffset::One => {
                if lag >= 1 && lag - 1 < self.weights.len() {
                    self.weights[lag - 1]
                } else {
                    0.0
                }
            }
            DelayOffset::Zero => {
                if lag < self.weights.len() {
                    self.weights[lag]
                } else {
                    0.0
                }
            }
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Largest lag (in grid units) with any stored weight.
    pub fn max_lag(&self) -> usize {
        match self.offset {
            DelayOffset::One => self.weights.len(),
            DelayOffset::Zero => self.weights.len().saturating_sub(1),
        }
    }

    /// Collapse daily weights into weekly bins: daily lags 1..=7 become weekly
    /// lag 1 (and daily lags 0..=6 weekly lag 0 for lag-0 kernels).
    pub fn to_weekly(&self) -> DiscretizedDelay {
        // Stored index i is daily lag i+1 (lag-1 kernels) or i (lag-0), so
        // chunking the stored array by 7 lands each daily lag in the right
        // weekly bin for both conventions.
        let weekly = self
            .weights
            .chunks(7)
            .map(|chunk| chunk.iter().sum())
            .collect();
        DiscretizedDelay {
            weights: weekly,
            offset: self.offset,
        }
    }
}

/// Discretize a continuous delay onto an integer grid of `length` bins.
///
/// For lag-1 kernels the bins cover lags `1..=length`; for lag-0 kernels they
/// cover lags `0..length`, with the first two bins split at `F(0.5)` so that a
/// lag-0 mass exists. Mass beyond `length` bins is truncated, not
/// renormalized.
pub fn discretize(
    delay: &ContinuousDelay,
    length: usize,
    offset: DelayOffset,
) -> Result<DiscretizedDelay> {
    delay.validate()?;
    if length == 0 {
        return Err(Error::InvalidDelay("discretization length must be >= 1".into()));
    }
    let mut weights = Vec::with_capacity(length);
    match offset {
        DelayOffset::One => {
            weights.push(delay.cdf(1.5));
            for u in 2..=length {
                weights.push(delay.cdf(u as f64 + 0.5) - delay.cdf(u as f64 - 0.5));
            }
        }
        DelayOffset::Zero => {
            weights.push(delay.cdf(0.5));
            if length > 1 {
                weights.push(delay.cdf(1.5) - delay.cdf(0.5));
            }
            for u in 2..length {
                weights.push(delay.cdf(u as f64 + 0.5) - delay.cdf(u as f64 - 0.5));
            }
        }
    }
    // CDF differences can go mildly negative from roundoff in the far tail.
    for w in &mut weights {
        if *w < 0.0 && *w > -1e-12 {
            *w = 0.0;
        }
    }
    DiscretizedDelay::new(weights, offset)
}

/// Renewal-style weighted sum over past incidence.
///
/// `incidence[u]` holds the value at grid index `u`; the result is
/// `sum_u incidence[u] * w(t - u)` for `u <= t`. Lag-1 kernels contribute
/// nothing at `u = t`, so this computes the renewal load `Lambda_t` for
/// generation-time weights and the reporting load `D_t` for latent-period
/// weights.
pub fn weighted_incidence_sum(incidence: &[f64], weights: &DiscretizedDelay, t: usize) -> f64 {
    if incidence.is_empty() {
        return 0.0;
    }
    let hi = t.min(incidence.len() - 1);
    let lo = t.saturating_sub(weights.max_lag());
    (lo..=hi)
        .map(|u| incidence[u] * weights.lag_weight(t - u))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn exponential_offset_one_closed_form() {
        // F(x) = 1 - e^{-x}: weights [F(1.5), F(2.5) - F(1.5)].
        let d = discretize(&ContinuousDelay::Exponential { rate: 1.0 }, 2, DelayOffset::One)
            .unwrap();
        assert_abs_diff_eq!(d.weights[0], 1.0 - (-1.5f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(d.weights[1], (-1.5f64).exp() - (-2.5f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn exponential_offset_zero_closed_form() {
        let d = discretize(&ContinuousDelay::Exponential { rate: 1.0 }, 2, DelayOffset::Zero)
            .unwrap();
        assert_abs_diff_eq!(d.weights[0], 1.0 - (-0.5f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(d.weights[1], (-0.5f64).exp() - (-1.5f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn weighted_sum_examples() {
        let g = DiscretizedDelay::new(vec![1.0], DelayOffset::One).unwrap();
        assert_abs_diff_eq!(weighted_incidence_sum(&[10.0], &g, 1), 10.0);

        let g = DiscretizedDelay::new(vec![0.6, 0.4], DelayOffset::One).unwrap();
        assert_abs_diff_eq!(weighted_incidence_sum(&[10.0, 20.0], &g, 2), 16.0);

        assert_abs_diff_eq!(weighted_incidence_sum(&[0.0, 0.0], &g, 2), 0.0);
    }

    #[test]
    fn offset_zero_includes_lag_zero() {
        let d = DiscretizedDelay::new(vec![0.5, 0.25], DelayOffset::Zero).unwrap();
        // t = 0: only the lag-0 term.
        assert_abs_diff_eq!(weighted_incidence_sum(&[8.0], &d, 0), 4.0);
    }

    #[test]
    fn hypo_exponential_equal_rates_is_erlang() {
        let hypo = ContinuousDelay::HypoExponential { rate1: 0.5, rate2: 0.5 };
        // Erlang(2, 0.5) at x = 4: 1 - e^{-2}(1 + 2).
        assert_abs_diff_eq!(hypo.cdf(4.0), 1.0 - 3.0 * (-2.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn weekly_binning_preserves_mass() {
        let daily = discretize(
            &ContinuousDelay::HypoExponential { rate1: 0.25, rate2: 2.0 / 15.0 },
            140,
            DelayOffset::One,
        )
        .unwrap();
        let weekly = daily.to_weekly();
        assert_eq!(weekly.len(), 20);
        assert_abs_diff_eq!(weekly.total_mass(), daily.total_mass(), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn weights_nonneg_and_sum_below_one(
            family in 0usize..5,
            a in 0.05f64..5.0,
            b in 0.05f64..5.0,
            length in 1usize..60,
        ) {
            let delay = match family {
                0 => ContinuousDelay::Exponential { rate: a },
                1 => ContinuousDelay::Gamma { shape: a, rate: b },
                2 => ContinuousDelay::LogNormal { log_mean: a.ln(), log_sd: b },
                3 => ContinuousDelay::Weibull { shape: a, scale: b },
                _ => ContinuousDelay::HypoExponential { rate1: a, rate2: b },
            };
            let d = discretize(&delay, length, DelayOffset::One).unwrap();
            prop_assert!(d.weights.iter().all(|w| *w >= 0.0));
            prop_assert!(d.total_mass() <= 1.0 + 1e-12);
            // Telescoping: the sum equals F(length + 0.5).
            prop_assert!((d.total_mass() - delay.cdf(length as f64 + 0.5)).abs() < 1e-9);
        }

        #[test]
        fn weighted_sum_is_linear(scale in 0.1f64..10.0) {
            let g = DiscretizedDelay::new(vec![0.3, 0.2, 0.1], DelayOffset::One).unwrap();
            let inc = vec![3.0, 1.0, 4.0, 1.0, 5.0];
            let base = weighted_incidence_sum(&inc, &g, 4);
            let scaled: Vec<f64> = inc.iter().map(|v| v * scale).collect();
            let got = weighted_incidence_sum(&scaled, &g, 4);
            prop_assert!((got - scale * base).abs() <= 1e-9 * base.abs().max(1.0) * scale.max(1.0));
        }
    }
}
