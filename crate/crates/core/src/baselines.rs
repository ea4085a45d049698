//! Window-posterior baseline estimator (cases treated as incidence, conjugate
//! gamma posterior per window) and its Poisson / quasi-Poisson GLM mimics.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::delay::{weighted_incidence_sum, DelayOffset, DiscretizedDelay};
use crate::error::{Error, Result};
use crate::series::ObservedSeries;

#[derive(Debug, Clone)]
pub struct EpiEstimConfig {
    /// Time steps per estimation window.
    pub window: usize,
    /// Gamma prior shape on the fixed window-level reproduction number.
    pub prior_shape: f64,
    /// Gamma prior scale (not rate).
    pub prior_scale: f64,
    pub generation: DiscretizedDelay,
}

impl EpiEstimConfig {
    pub fn new(window: usize, prior_shape: f64, prior_scale: f64, generation: DiscretizedDelay) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidConfig("window must be >= 1".into()));
        }
        if !(prior_shape > 0.0 && prior_scale > 0.0) {
            return Err(Error::InvalidConfig("prior shape and scale must be positive".into()));
        }
        if generation.offset != DelayOffset::One {
            return Err(Error::InvalidConfig("generation weights must start at lag 1".into()));
        }
        Ok(EpiEstimConfig { window, prior_shape, prior_scale, generation })
    }
}

/// One per-window estimate, assigned to the window's final time step
/// (1-based `t_end`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum WindowEstimate {
    /// Conjugate gamma posterior (shape/rate parameterization).
    Conjugate { t_end: usize, shape: f64, rate: f64 },
    /// GLM point estimate with a Wald standard error; `dispersion` is the
    /// Pearson dispersion of the quasi variant, `None` for the plain Poisson
    /// fit or when undefined.
    Glm {
        t_end: usize,
        estimate: f64,
        std_error: f64,
        dispersion: Option<f64>,
    },
}

/// Median and central 95% interval of a window estimate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WindowSummary {
    pub t_end: usize,
    pub median: f64,
    pub lower95: f64,
    pub upper95: f64,
    pub dispersion: Option<f64>,
}

impl WindowEstimate {
    pub fn t_end(&self) -> usize {
        match self {
            WindowEstimate::Conjugate { t_end, .. } | WindowEstimate::Glm { t_end, .. } => *t_end,
        }
    }

    pub fn summary(&self) -> WindowSummary {
        match *self {
            WindowEstimate::Conjugate { t_end, shape, rate } => {
                let g = Gamma::new(shape, rate).unwrap();
                WindowSummary {
                    t_end,
                    median: g.inverse_cdf(0.5),
                    lower95: g.inverse_cdf(0.025),
                    upper95: g.inverse_cdf(0.975),
                    dispersion: None,
                }
            }
            WindowEstimate::Glm { t_end, estimate, std_error, dispersion } => WindowSummary {
                t_end,
                median: estimate,
                lower95: estimate - 1.959963984540054 * std_error,
                upper95: estimate + 1.959963984540054 * std_error,
                dispersion,
            },
        }
    }
}

/// Renewal load at each 1-based step with observed cases standing in for
/// incidence (no seeding; the sum starts at the first observation).
fn case_loads(series: &ObservedSeries, generation: &DiscretizedDelay) -> Vec<f64> {
    let incidence: Vec<f64> = series.cases.iter().map(|&c| c as f64).collect();
    // Grid index t-1 holds time t; the load at time t sums strictly earlier
    // steps because the kernel starts at lag 1.
    (1..=series.len())
        .map(|t| weighted_incidence_sum(&incidence, generation, t - 1))
        .collect()
}

/// Valid window ends: every step in the window needs a defined load, and the
/// first step (empty renewal sum) never has one.
fn window_ends(series_len: usize, window: usize) -> impl Iterator<Item = usize> {
    let first = window + 1;
    first..=series_len
}

/// Conjugate window posteriors: shape = prior shape + window case total,
/// rate = 1/prior scale + window load total.
pub fn epiestim(series: &ObservedSeries, config: &EpiEstimConfig) -> Result<Vec<WindowEstimate>> {
    let loads = case_loads(series, &config.generation);
    let mut out = Vec::new();
    for t_end in window_ends(series.len(), config.window) {
        let lo = t_end - config.window; // 0-based start of window
        let case_sum: u64 = series.cases[lo..t_end].iter().sum();
        let load_sum: f64 = loads[lo..t_end].iter().sum();
        if load_sum <= 0.0 {
            continue; // undefined window, emitted as missing
        }
        out.push(WindowEstimate::Conjugate {
            t_end,
            shape: config.prior_shape + case_sum as f64,
            rate: 1.0 / config.prior_scale + load_sum,
        });
    }
    Ok(out)
}

/// Window posteriors averaged over a set of generation-time draws (equal
/// weights); quantiles come from the gamma mixture CDF.
pub fn epiestim_uncertain(
    series: &ObservedSeries,
    config: &EpiEstimConfig,
    generation_draws: &[DiscretizedDelay],
) -> Result<Vec<WindowSummary>> {
    if generation_draws.is_empty() {
        return Err(Error::InvalidConfig("need at least one generation-time draw".into()));
    }
    let mut per_draw = Vec::with_capacity(generation_draws.len());
    for g in generation_draws {
        let cfg = EpiEstimConfig {
            window: config.window,
            prior_shape: config.prior_shape,
            prior_scale: config.prior_scale,
            generation: g.clone(),
        };
        per_draw.push(epiestim(series, &cfg)?);
    }

    let mut out = Vec::new();
    for t_end in window_ends(series.len(), config.window) {
        let mut components = Vec::new();
        for draws in &per_draw {
            if let Some(WindowEstimate::Conjugate { shape, rate, .. }) =
                draws.iter().find(|e| e.t_end() == t_end)
            {
                components.push(Gamma::new(*shape, *rate).unwrap());
            }
        }
        if components.is_empty() {
            continue;
        }
        let mixture_cdf = |x: f64| -> f64 {
            components.iter().map(|g| g.cdf(x)).sum::<f64>() / components.len() as f64
        };
        let quantile = |p: f64| -> f64 {
            // Bracket from component quantiles, then bisect.
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for g in &components {
                lo = lo.min(g.inverse_cdf(p));
                hi = hi.max(g.inverse_cdf(p));
            }
            if (hi - lo).abs() < 1e-14 {
                return lo;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mixture_cdf(mid) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-12 * (1.0 + hi.abs()) {
                    break;
                }
            }
            0.5 * (lo + hi)
        };
        out.push(WindowSummary {
            t_end,
            median: quantile(0.5),
            lower95: quantile(0.025),
            upper95: quantile(0.975),
            dispersion: None,
        });
    }
    Ok(out)
}

/// Identity-link, no-intercept Poisson fit per window: the closed-form MLE is
/// the window case total over the window load total, with a Wald standard
/// error from the expected information.
pub fn glm_poisson_mimic(
    series: &ObservedSeries,
    window: usize,
    generation: &DiscretizedDelay,
) -> Result<Vec<WindowEstimate>> {
    if window == 0 {
        return Err(Error::InvalidConfig("window must be >= 1".into()));
    }
    let loads = case_loads(series, generation);
    let mut out = Vec::new();
    for t_end in window_ends(series.len(), window) {
        let lo = t_end - window;
        let case_sum: u64 = series.cases[lo..t_end].iter().sum();
        let load_sum: f64 = loads[lo..t_end].iter().sum();
        if load_sum <= 0.0 {
            continue;
        }
        let estimate = case_sum as f64 / load_sum;
        // Degenerate all-zero windows keep a zero SE and are flagged by the
        // zero estimate itself.
        let std_error = (estimate / load_sum).sqrt();
        out.push(WindowEstimate::Glm { t_end, estimate, std_error, dispersion: None });
    }
    Ok(out)
}

/// Same point estimates as the Poisson fit, with the Wald error scaled by the
/// square root of the Pearson dispersion.
pub fn glm_quasipoisson_mimic(
    series: &ObservedSeries,
    window: usize,
    generation: &DiscretizedDelay,
) -> Result<Vec<WindowEstimate>> {
    if window < 2 {
        return Err(Error::InvalidConfig(
            "quasi-Poisson dispersion needs windows of at least 2 steps".into(),
        ));
    }
    let loads = case_loads(series, generation);
    let mut out = Vec::new();
    for t_end in window_ends(series.len(), window) {
        let lo = t_end - window;
        let case_sum: u64 = series.cases[lo..t_end].iter().sum();
        let load_sum: f64 = loads[lo..t_end].iter().sum();
        if load_sum <= 0.0 {
            continue;
        }
        let estimate = case_sum as f64 / load_sum;
        if estimate == 0.0 || loads[lo..t_end].iter().any(|l| *l <= 0.0) {
            // Dispersion undefined (zero estimate or zero fitted value);
            // emitted as missing.
            continue;
        }
        let pearson: f64 = (lo..t_end)
            .map(|i| {
                let fitted = estimate * loads[i];
                let resid = series.cases[i] as f64 - fitted;
                resid * resid / fitted
            })
            .sum();
        let dispersion = pearson / (window as f64 - 1.0);
        let std_error = (estimate / load_sum).sqrt() * dispersion.sqrt();
        out.push(WindowEstimate::Glm { t_end, estimate, std_error, dispersion: Some(dispersion) });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{StartLabel, TimeStep};
    use approx::assert_abs_diff_eq;

    fn series(cases: Vec<u64>) -> ObservedSeries {
        let tests = vec![1_000_000; cases.len()];
        ObservedSeries::new(StartLabel::Index(1), TimeStep::Weekly, cases, tests).unwrap()
    }

    fn unit_generation(len: usize) -> DiscretizedDelay {
        // All mass at lag 1: the load at t is the case count at t-1.
        let mut w = vec![0.0; len];
        w[0] = 1.0;
        DiscretizedDelay::new(w, DelayOffset::One).unwrap()
    }

    #[test]
    fn conjugate_update_arithmetic() {
        // Window totals case_sum = 10, load_sum = 5 with prior (1, 5):
        // posterior Gamma(11, 5.2), mean 11/5.2.
        let s = series(vec![5, 10, 0, 0]);
        let g = unit_generation(4);
        let cfg = EpiEstimConfig::new(1, 1.0, 5.0, g).unwrap();
        let est = epiestim(&s, &cfg).unwrap();
        match est[0] {
            WindowEstimate::Conjugate { t_end, shape, rate } => {
                assert_eq!(t_end, 2);
                assert_abs_diff_eq!(shape, 11.0, epsilon = 1e-12);
                assert_abs_diff_eq!(rate, 5.2, epsilon = 1e-12);
                assert_abs_diff_eq!(shape / rate, 2.1153846153846154, epsilon = 1e-12);
            }
            _ => panic!("expected conjugate estimate"),
        }
        // Zero cases in the window: posterior Gamma(1, 5.2).
        match est[1] {
            WindowEstimate::Conjugate { shape, rate, .. } => {
                assert_abs_diff_eq!(shape, 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(rate, 1.0 / 5.0 + 10.0, epsilon = 1e-12);
            }
            _ => panic!("expected conjugate estimate"),
        }
    }

    #[test]
    fn fixed_point_at_unit_reproduction() {
        // Cases exactly reproduce the loads; with a diffuse prior the
        // posterior mean pins to 1.
        let s = series(vec![5000, 5000, 5000, 5000, 5000, 5000]);
        let g = unit_generation(6);
        let cfg = EpiEstimConfig::new(1, 1.0, 1e6, g).unwrap();
        let est = epiestim(&s, &cfg).unwrap();
        for e in est {
            if let WindowEstimate::Conjugate { shape, rate, .. } = e {
                assert!((shape / rate - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn poisson_mle_and_wald_error() {
        // Loads equal cases shifted by the unit kernel.
        let s = series(vec![5, 5, 10, 15, 20]);
        let g = unit_generation(5);
        let est = glm_poisson_mimic(&s, 4, &g).unwrap();
        assert_eq!(est.len(), 1);
        match est[0] {
            WindowEstimate::Glm { t_end, estimate, std_error, dispersion } => {
                assert_eq!(t_end, 5);
                // cases(2..=5) = [5,10,15,20]; loads = previous cases = [5,5,10,15].
                assert_abs_diff_eq!(estimate, 50.0 / 35.0, epsilon = 1e-12);
                assert_abs_diff_eq!(std_error, (estimate / 35.0).sqrt(), epsilon = 1e-12);
                assert!(dispersion.is_none());
            }
            _ => panic!("expected glm estimate"),
        }
    }

    #[test]
    fn poisson_beta_is_case_over_load_ratio() {
        // Lag-2 kernel: the final window sees cases [30, 30] against loads
        // [10, 20], so beta = 60/30 = 2.
        let s = series(vec![10, 20, 30, 30]);
        let g = DiscretizedDelay::new(vec![0.0, 1.0], DelayOffset::One).unwrap();
        let est = glm_poisson_mimic(&s, 2, &g).unwrap();
        let last = est.iter().find(|e| e.t_end() == 4).unwrap();
        match last {
            WindowEstimate::Glm { estimate, .. } => {
                assert_abs_diff_eq!(*estimate, 2.0, epsilon = 1e-12);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn quasi_pearson_dispersion_by_hand() {
        // A lag-2 kernel makes the loads at t = 3, 4 equal the cases at
        // t = 1, 2, so the final window sees cases [12, 18] against loads
        // [10, 20]: beta = 1, Pearson = 4/10 + 4/20 = 0.6, dispersion 0.6,
        // and the Wald error picks up a sqrt(0.6) factor.
        let s = series(vec![10, 20, 12, 18]);
        let g = DiscretizedDelay::new(vec![0.0, 1.0], DelayOffset::One).unwrap();
        let est = glm_quasipoisson_mimic(&s, 2, &g).unwrap();
        let last = est.iter().find(|e| e.t_end() == 4).expect("window at t_end 4");
        match last {
            WindowEstimate::Glm { estimate, std_error, dispersion, .. } => {
                assert_abs_diff_eq!(*estimate, 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(dispersion.unwrap(), 0.6, epsilon = 1e-12);
                assert_abs_diff_eq!(
                    *std_error,
                    0.6_f64.sqrt() * (1.0_f64 / 30.0).sqrt(),
                    epsilon = 1e-12
                );
            }
            _ => panic!("expected glm estimate"),
        }
    }

    #[test]
    fn zero_residual_window_has_zero_dispersion() {
        // Cases exactly equal to beta * load leave no Pearson residual.
        let s = series(vec![10, 10, 10, 10]);
        let g = unit_generation(4);
        let est = glm_quasipoisson_mimic(&s, 2, &g).unwrap();
        for e in &est {
            if let WindowEstimate::Glm { dispersion, .. } = e {
                assert_abs_diff_eq!(dispersion.unwrap(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn quasi_matches_poisson_points_and_scales_width() {
        let s = series(vec![8, 14, 9, 17, 12, 25, 19]);
        let g = unit_generation(7);
        let pois = glm_poisson_mimic(&s, 3, &g).unwrap();
        let quasi = glm_quasipoisson_mimic(&s, 3, &g).unwrap();
        assert_eq!(pois.len(), quasi.len());
        for (p, q) in pois.iter().zip(&quasi) {
            let (pe, pse) = match p {
                WindowEstimate::Glm { estimate, std_error, .. } => (*estimate, *std_error),
                _ => unreachable!(),
            };
            let (qe, qse, disp) = match q {
                WindowEstimate::Glm { estimate, std_error, dispersion, .. } => {
                    (*estimate, *std_error, dispersion.unwrap())
                }
                _ => unreachable!(),
            };
            assert_abs_diff_eq!(pe, qe, epsilon = 1e-12);
            assert_abs_diff_eq!(qse, pse * disp.sqrt(), epsilon = 1e-12);
            // Interval width ratio is exactly sqrt(dispersion).
            let pw = p.summary().upper95 - p.summary().lower95;
            let qw = q.summary().upper95 - q.summary().lower95;
            assert_abs_diff_eq!(qw, pw * disp.sqrt(), epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_case_window_flagged_degenerate() {
        let s = series(vec![5, 0, 0, 5]);
        let g = unit_generation(4);
        let pois = glm_poisson_mimic(&s, 1, &g).unwrap();
        // Window ending at t=2 has load 5, cases 0: estimate 0 with zero SE.
        let first = pois.iter().find(|e| e.t_end() == 2).unwrap();
        match first {
            WindowEstimate::Glm { estimate, std_error, .. } => {
                assert_eq!(*estimate, 0.0);
                assert_eq!(*std_error, 0.0);
            }
            _ => panic!(),
        }
        // Quasi dispersion is undefined when the estimate is zero; the
        // window ending at t=3 (cases 0, 0) is dropped.
        let quasi = glm_quasipoisson_mimic(&s, 2, &g).unwrap();
        assert!(quasi.iter().all(|e| e.t_end() != 3));
    }

    #[test]
    fn window_count_on_17_steps() {
        // One-step windows on a 17-step series: estimates at t = 2..=17.
        let s = series(vec![10; 17]);
        let g = unit_generation(17);
        let cfg = EpiEstimConfig::new(1, 1.0, 5.0, g).unwrap();
        let est = epiestim(&s, &cfg).unwrap();
        assert_eq!(est.len(), 16);
        assert_eq!(est[0].t_end(), 2);
        assert_eq!(est.last().unwrap().t_end(), 17);
    }

    #[test]
    fn diffuse_prior_matches_glm() {
        let s = series(vec![700, 1300, 2200, 1800, 3100, 2700, 4000]);
        let g = unit_generation(7);
        let cfg = EpiEstimConfig::new(2, 1.0, 1e6, g.clone()).unwrap();
        let ee = epiestim(&s, &cfg).unwrap();
        let glm = glm_poisson_mimic(&s, 2, &g).unwrap();
        for (e, p) in ee.iter().zip(&glm) {
            let mean = match e {
                WindowEstimate::Conjugate { shape, rate, .. } => shape / rate,
                _ => unreachable!(),
            };
            let beta = match p {
                WindowEstimate::Glm { estimate, .. } => *estimate,
                _ => unreachable!(),
            };
            assert!((mean / beta - 1.0).abs() < 1e-3, "mean {mean} vs beta {beta}");
        }
    }
}
