//! Stochastic SEIR outbreak simulator (exact-event Gillespie with thinning
//! for the time-varying transmission rate), weekly testing scenarios, and the
//! negative-binomial surveillance emission.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::series::{ObservedSeries, StartLabel, TimeStep};

/// Piecewise-linear function of time in days.
#[derive(Debug, Clone, Serialize)]
pub struct PiecewiseLinear {
    /// `(day, value)` knots with strictly increasing days.
    pub knots: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidConfig("need at least one knot".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidConfig("knot days must strictly increase".into()));
        }
        Ok(PiecewiseLinear { knots })
    }

    pub fn eval(&self, day: f64) -> f64 {
        let k = &self.knots;
        if day <= k[0].0 {
            return k[0].1;
        }
        if day >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        for w in k.windows(2) {
            if day <= w[1].0 {
                let frac = (day - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + frac * (w[1].1 - w[0].1);
            }
        }
        k[k.len() - 1].1
    }

    /// Maximum over `[lo, hi]`; attained at an endpoint or interior knot.
    fn max_on(&self, lo: f64, hi: f64) -> f64 {
        let mut m = self.eval(lo).max(self.eval(hi));
        for &(day, value) in &self.knots {
            if day > lo && day < hi {
                m = m.max(value);
            }
        }
        m
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeirConfig {
    pub population: u64,
    pub initial_infectious: u64,
    pub latent_mean_days: f64,
    pub infectious_mean_days: f64,
    /// Basic reproduction number trajectory over the simulation horizon.
    pub r0: PiecewiseLinear,
    pub horizon_weeks: usize,
    /// Leading weeks excluded from analysis.
    pub discard_weeks: usize,
    pub seed: u64,
}

impl Default for SeirConfig {
    fn default() -> Self {
        // A grow-fall-rise-fall basic reproduction number: six weeks of
        // unchecked growth, suppression, a partial rebound, and a late tail.
        // Chosen to give epidemic-scale incidence in the analysis window;
        // fully overridable.
        let r0 = PiecewiseLinear::new(vec![
            (0.0, 2.0),
            (42.0, 2.0),
            (77.0, 0.6),
            (105.0, 1.8),
            (147.0, 0.65),
            (196.0, 1.25),
        ])
        .unwrap();
        SeirConfig {
            population: 1_000_000,
            initial_infectious: 10,
            latent_mean_days: 4.0,
            infectious_mean_days: 7.5,
            r0,
            horizon_weeks: 28,
            discard_weeks: 11,
            seed: 0,
        }
    }
}

impl SeirConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || self.initial_infectious == 0 {
            return Err(Error::InvalidConfig("population and seed infections must be positive".into()));
        }
        if self.initial_infectious > self.population {
            return Err(Error::InvalidConfig("more initial infectious than people".into()));
        }
        if !(self.latent_mean_days > 0.0 && self.infectious_mean_days > 0.0) {
            return Err(Error::InvalidConfig("compartment dwell times must be positive".into()));
        }
        if self.horizon_weeks == 0 || self.discard_weeks >= self.horizon_weeks {
            return Err(Error::InvalidConfig(
                "discard_weeks must be below horizon_weeks and horizon positive".into(),
            ));
        }
        Ok(())
    }
}

/// Weekly test-volume scenarios.
#[derive(Debug, Clone, Serialize)]
pub enum TestingScenario {
    /// Weekly totals drawn from a normal distribution truncated above zero.
    NormalDraw { weekly_mean: f64, weekly_sd: f64 },
    /// Constant level, then a linear ramp to a target over a fixed number of
    /// weeks, constant afterwards.
    FlatThenRamp {
        flat_weeks: usize,
        flat_level: f64,
        ramp_target: f64,
        ramp_weeks: usize,
    },
}

impl TestingScenario {
    /// Weekly test totals for `weeks` weeks. Draws all randomness up front so
    /// the dynamics RNG stream is unaffected by the scenario kind.
    fn weekly_tests<R: Rng>(&self, weeks: usize, rng: &mut R) -> Vec<u64> {
        match *self {
            TestingScenario::NormalDraw { weekly_mean, weekly_sd } => {
                let normal = rand_distr::Normal::new(weekly_mean, weekly_sd).unwrap();
                (0..weeks)
                    .map(|_| {
                        let mut v = normal.sample(rng);
                        while v <= 0.0 {
                            v = normal.sample(rng);
                        }
                        v.round().max(1.0) as u64
                    })
                    .collect()
            }
            TestingScenario::FlatThenRamp { flat_weeks, flat_level, ramp_target, ramp_weeks } => {
                (1..=weeks)
                    .map(|w| {
                        let level = if w <= flat_weeks {
                            flat_level
                        } else if w <= flat_weeks + ramp_weeks {
                            let frac = (w - flat_weeks) as f64 / ramp_weeks as f64;
                            flat_level + frac * (ramp_target - flat_level)
                        } else {
                            ramp_target
                        };
                        level.round().max(1.0) as u64
                    })
                    .collect()
            }
        }
    }
}

/// The three standard scenarios: steady testing, a slow ramp after six flat
/// weeks, and a steeper ramp after eight flat weeks. Levels are calibrated so
/// that detection fractions land in a realistic 5-25% band.
pub fn scenario_presets() -> [TestingScenario; 3] {
    [
        TestingScenario::NormalDraw { weekly_mean: 1e4, weekly_sd: 1e3 },
        TestingScenario::FlatThenRamp {
            flat_weeks: 6,
            flat_level: 5e3,
            ramp_target: 3e4,
            ramp_weeks: 11,
        },
        TestingScenario::FlatThenRamp {
            flat_weeks: 8,
            flat_level: 5e3,
            ramp_target: 5e4,
            ramp_weeks: 9,
        },
    ]
}

/// Surveillance emission constants.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EmissionParams {
    pub rho: f64,
    pub kappa: f64,
}

impl Default for EmissionParams {
    fn default() -> Self {
        EmissionParams { rho: 9e-5, kappa: 5.0 }
    }
}

/// One simulated day: compartments at the start of the day, the number of
/// E-to-I transitions during it, and the instantaneous reproduction number.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DayRecord {
    pub day: usize,
    pub susceptible: u64,
    pub exposed: u64,
    pub infectious: u64,
    pub removed: u64,
    pub transitions: u64,
    pub rt: f64,
}

/// Weekly ground truth for the analysis window.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeekTruth {
    /// 1-based week of the simulation.
    pub week: usize,
    /// Reproduction number on the week's third day.
    pub rt: f64,
    /// Total E-to-I transitions during the week.
    pub incidence: u64,
}

#[derive(Debug, Clone)]
pub struct SimulationTruth {
    pub daily: Vec<DayRecord>,
    /// Daily observed series over the full horizon.
    pub observed_daily: ObservedSeries,
    /// Weekly truth over the full horizon.
    pub weekly: Vec<WeekTruth>,
    pub discard_weeks: usize,
    /// True if the epidemic died out before the analysis window opened.
    pub extinct_before_analysis: bool,
}

impl SimulationTruth {
    /// Weekly observed series over the full horizon.
    pub fn observed_weekly_full(&self) -> Result<ObservedSeries> {
        let mut weekly = crate::series::aggregate_weekly(&self.observed_daily)?;
        weekly.start_label = StartLabel::Index(1);
        Ok(weekly)
    }

    /// Weekly observed series restricted to the analysis window.
    pub fn observed_weekly_analysis(&self) -> Result<ObservedSeries> {
        let weekly = crate::series::aggregate_weekly(&self.observed_daily)?;
        let start = self.discard_weeks;
        let mut windowed = weekly.window(start, weekly.len())?;
        windowed.start_label = StartLabel::Index(self.discard_weeks as i64 + 1);
        Ok(windowed)
    }

    /// Weekly truth restricted to the analysis window.
    pub fn weekly_analysis(&self) -> Vec<WeekTruth> {
        self.weekly[self.discard_weeks..].to_vec()
    }
}

/// Exact-event SEIR simulation with daily tallies and the test-conditioned
/// negative-binomial case emission.
pub fn simulate(
    config: &SeirConfig,
    scenario: &TestingScenario,
    emission: EmissionParams,
) -> Result<SimulationTruth> {
    config.validate()?;
    if !(emission.rho > 0.0 && emission.kappa > 0.0) {
        return Err(Error::InvalidConfig("emission parameters must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let weeks = config.horizon_weeks;
    let days = 7 * weeks;
    let weekly_tests = scenario.weekly_tests(weeks, &mut rng);
    let daily_tests = allocate_daily_tests(&weekly_tests);

    let population = config.population as f64;
    let mut susceptible = config.population - config.initial_infectious;
    let mut exposed = 0u64;
    let mut infectious = config.initial_infectious;
    let mut removed = 0u64;

    let latent_rate = 1.0 / config.latent_mean_days;
    let recovery_rate = 1.0 / config.infectious_mean_days;

    let mut daily = Vec::with_capacity(days);
    let mut transitions = vec![0u64; days];
    let mut extinct_before_analysis = false;

    let mut clock = 0.0f64;
    for day in 0..days {
        let day_end = (day + 1) as f64;
        daily.push(DayRecord {
            day: day + 1,
            susceptible,
            exposed,
            infectious,
            removed,
            transitions: 0, // filled after the day completes
            rt: config.r0.eval(day as f64) * susceptible as f64 / population,
        });

        // Transmission rate bound for thinning over the remaining day.
        let beta_max = config.r0.max_on(clock, day_end) * recovery_rate;
        loop {
            if exposed == 0 && infectious == 0 {
                clock = day_end;
                break;
            }
            let infect_bound =
                beta_max * susceptible as f64 * infectious as f64 / population;
            let progress = exposed as f64 * latent_rate;
            let recover = infectious as f64 * recovery_rate;
            let total_bound = infect_bound + progress + recover;
            if total_bound <= 0.0 {
                clock = day_end;
                break;
            }
            let wait = rand_distr::Exp::new(total_bound).unwrap().sample(&mut rng);
            if clock + wait >= day_end {
                clock = day_end;
                break;
            }
            clock += wait;
            let u: f64 = rng.random::<f64>() * total_bound;
            let beta_now = config.r0.eval(clock) * recovery_rate;
            let infect_now = beta_now * susceptible as f64 * infectious as f64 / population;
            if u < infect_now {
                susceptible -= 1;
                exposed += 1;
            } else if u < infect_bound {
                // Thinning rejection of the transmission bound.
            } else if u < infect_bound + progress {
                exposed -= 1;
                infectious += 1;
                transitions[day] += 1;
            } else {
                infectious -= 1;
                removed += 1;
            }
        }
        daily[day].transitions = transitions[day];

        if exposed == 0
            && infectious == 0
            && day + 1 <= 7 * config.discard_weeks
            && !extinct_before_analysis
        {
            extinct_before_analysis = true;
        }
    }

    // Surveillance emission: daily cases from a negative binomial with mean
    // rho * tests * transitions, capped at the day's test count.
    let mut cases = Vec::with_capacity(days);
    for day in 0..days {
        let mean = emission.rho * daily_tests[day] as f64 * transitions[day] as f64;
        let draw = sample_neg_binom(mean, emission.kappa, &mut rng);
        cases.push(draw.min(daily_tests[day]));
    }

    let observed_daily =
        ObservedSeries::new(StartLabel::Index(1), TimeStep::Daily, cases, daily_tests)?;

    let weekly = (0..weeks)
        .map(|w| WeekTruth {
            week: w + 1,
            rt: daily[7 * w + 2].rt,
            incidence: transitions[7 * w..7 * w + 7].iter().sum(),
        })
        .collect();

    Ok(SimulationTruth {
        daily,
        observed_daily,
        weekly,
        discard_weeks: config.discard_weeks,
        extinct_before_analysis,
    })
}

/// Spread weekly test totals over days: an even share per day with the
/// remainder assigned to the last day of the week.
fn allocate_daily_tests(weekly: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(7 * weekly.len());
    for &total in weekly {
        let base = total / 7;
        for d in 0..7 {
            if d == 6 {
                out.push(total - 6 * base);
            } else {
                out.push(base);
            }
        }
    }
    out
}

/// Negative binomial in mean/over-dispersion form via the gamma-Poisson
/// mixture; a zero mean is the degenerate point mass at zero.
pub fn sample_neg_binom<R: Rng>(mean: f64, kappa: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let gamma = rand_distr::Gamma::new(kappa, mean / kappa).unwrap();
    let rate = gamma.sample(rng);
    if rate <= 0.0 {
        return 0;
    }
    rand_distr::Poisson::new(rate).unwrap().sample(rng) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_protocol() {
        let [s1, s2, s3] = scenario_presets();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t1 = s1.weekly_tests(28, &mut rng);
        assert!(t1.iter().all(|&v| v > 0));

        let t2 = s2.weekly_tests(28, &mut rng);
        assert_eq!(t2[5], 5_000); // week 6 still flat
        assert_eq!(t2[16], 30_000); // week 17 reaches the ramp target
        assert_eq!(t2[27], 30_000);

        let t3 = s3.weekly_tests(28, &mut rng);
        assert_eq!(t3[7], 5_000);
        assert_eq!(t3[16], 50_000);
        // Steeper ramp than scenario 2.
        let slope2 = (t2[16] - t2[5]) as f64 / 11.0;
        let slope3 = (t3[16] - t3[7]) as f64 / 9.0;
        assert!(slope3 > slope2);
    }

    #[test]
    fn conservation_and_monotone_susceptibles() {
        let config = SeirConfig { horizon_weeks: 6, discard_weeks: 1, seed: 11, ..SeirConfig::default() };
        let truth = simulate(&config, &scenario_presets()[0], EmissionParams::default()).unwrap();
        let n = config.population;
        let mut prev_s = u64::MAX;
        for rec in &truth.daily {
            assert_eq!(rec.susceptible + rec.exposed + rec.infectious + rec.removed, n);
            assert!(rec.susceptible <= prev_s);
            prev_s = rec.susceptible;
        }
    }

    #[test]
    fn zero_r0_decays_to_extinction() {
        let config = SeirConfig {
            r0: PiecewiseLinear::new(vec![(0.0, 0.0)]).unwrap(),
            horizon_weeks: 12,
            discard_weeks: 2,
            seed: 3,
            ..SeirConfig::default()
        };
        let truth = simulate(&config, &scenario_presets()[0], EmissionParams::default()).unwrap();
        // No exposures can occur, so no E->I transitions ever happen.
        assert!(truth.daily.iter().all(|r| r.transitions == 0));
        let last = truth.daily.last().unwrap();
        assert_eq!(last.exposed, 0);
        assert_eq!(last.infectious + last.removed, config.initial_infectious);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let config = SeirConfig { horizon_weeks: 5, discard_weeks: 1, seed: 42, ..SeirConfig::default() };
        let a = simulate(&config, &scenario_presets()[1], EmissionParams::default()).unwrap();
        let b = simulate(&config, &scenario_presets()[1], EmissionParams::default()).unwrap();
        assert_eq!(a.observed_daily.cases, b.observed_daily.cases);
        assert_eq!(
            a.daily.iter().map(|r| r.transitions).collect::<Vec<_>>(),
            b.daily.iter().map(|r| r.transitions).collect::<Vec<_>>()
        );
    }

    #[test]
    fn emission_moments_match_negative_binomial() {
        // Mean and variance of the emission draw at fixed transitions.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mean = 9e-5 * (10_000.0 / 7.0) * 100.0; // rho * daily tests * transitions
        let kappa = 5.0;
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_neg_binom(mean, kappa, &mut rng) as f64).collect();
        let m = crate::stats::mean(&draws);
        let v = crate::stats::sample_variance(&draws);
        let expect_var = mean + mean * mean / kappa;
        assert!((m / mean - 1.0).abs() < 0.03, "mean {m} vs {mean}");
        assert!((v / expect_var - 1.0).abs() < 0.1, "var {v} vs {expect_var}");
    }

    #[test]
    fn weekly_truth_uses_third_day() {
        let config = SeirConfig { horizon_weeks: 4, discard_weeks: 1, seed: 5, ..SeirConfig::default() };
        let truth = simulate(&config, &scenario_presets()[0], EmissionParams::default()).unwrap();
        for (w, rec) in truth.weekly.iter().enumerate() {
            assert_eq!(rec.rt, truth.daily[7 * w + 2].rt);
        }
    }

    #[test]
    fn analysis_window_drops_discarded_weeks() {
        let config = SeirConfig { horizon_weeks: 6, discard_weeks: 2, seed: 8, ..SeirConfig::default() };
        let truth = simulate(&config, &scenario_presets()[2], EmissionParams::default()).unwrap();
        let weekly = truth.observed_weekly_analysis().unwrap();
        assert_eq!(weekly.len(), 4);
        assert_eq!(truth.weekly_analysis().len(), 4);
        assert_eq!(truth.weekly_analysis()[0].week, 3);
        assert_eq!(weekly.label(0), "3");
    }
}
