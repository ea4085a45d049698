//! Small shared numeric helpers: moments, empirical quantiles, and
//! truncated-normal utilities used by several modules.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

/// Linear-interpolation empirical quantile (R type 7). `q` in [0, 1].
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&q), "quantile level out of range");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Sorts a copy of `values` and evaluates [`quantile`].
pub fn quantile_of(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile(&v, q)
}

pub fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Quantile of a normal truncated to `[0, inf)`.
pub fn truncated_normal_quantile(mu: f64, sigma: f64, q: f64) -> f64 {
    let alpha = std_normal_cdf(-mu / sigma);
    mu + sigma * std_normal_quantile(alpha + q * (1.0 - alpha))
}

/// Mean of a normal truncated to `[0, inf)`.
pub fn truncated_normal_mean(mu: f64, sigma: f64) -> f64 {
    let z = mu / sigma;
    mu + sigma * std_normal_pdf(z) / std_normal_cdf(z)
}

/// Natural-log of the negative-binomial pmf in mean/over-dispersion form:
/// mean `mu`, variance `mu + mu^2/kappa`.
pub fn neg_binom_ln_pmf(count: u64, mu: f64, kappa: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let k = count as f64;
    if mu <= 0.0 {
        // Degenerate at zero.
        return if count == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    ln_gamma(k + kappa) - ln_gamma(kappa) - ln_gamma(k + 1.0)
        + kappa * (kappa.ln() - (kappa + mu).ln())
        + k * (mu.ln() - (kappa + mu).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quantile_order_statistics() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_abs_diff_eq!(quantile(&v, 0.5), 3.0);
        assert_abs_diff_eq!(quantile(&v, 0.25), 2.0);
        assert_abs_diff_eq!(quantile(&v, 0.75), 4.0);
        assert_abs_diff_eq!(quantile(&v, 0.0), 1.0);
        assert_abs_diff_eq!(quantile(&v, 1.0), 5.0);
    }

    #[test]
    fn neg_binom_matches_closed_form_at_zero() {
        // P(0) = (kappa/(kappa+mu))^kappa; mu = 1, kappa = 1 gives 1/2.
        assert_abs_diff_eq!(neg_binom_ln_pmf(0, 1.0, 1.0), 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn neg_binom_poisson_limit() {
        // kappa -> inf: NB(mu, kappa) -> Poisson(mu).
        let mu: f64 = 7.3;
        for count in [0u64, 3, 7, 15] {
            let k = count as f64;
            let pois = k * mu.ln() - mu - statrs::function::gamma::ln_gamma(k + 1.0);
            let nb = neg_binom_ln_pmf(count, mu, 1e8);
            assert_abs_diff_eq!(nb, pois, epsilon = 1e-4);
        }
    }

    #[test]
    fn truncated_normal_quantile_median_of_untruncated_positive() {
        // With mu = 59, sigma = 60 the 0 truncation shifts the median up.
        let m = truncated_normal_quantile(59.0, 60.0, 0.5);
        assert!((m - 71.3).abs() < 0.5, "median {m}");
        // And 2.5% quantile near 5.0 (prior table cross-check).
        let lo = truncated_normal_quantile(59.0, 60.0, 0.025);
        assert!((lo - 5.0).abs() < 0.5, "lo {lo}");
    }
}
