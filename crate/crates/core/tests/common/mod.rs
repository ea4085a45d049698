//! Test-only oracles, kept independent of the library's hand-coded density
//! and gradient paths: densities are assembled term by term from statrs
//! distributions, and gradients come from central finite differences.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use statrs::distribution::{Continuous, Discrete};

use rt_estim::delay::{DelayOffset, DiscretizedDelay};
use rt_estim::model::{
    GammaModelConfig, NormalModelConfig, NormalPriorSet, NormalState, ParameterState, PriorSet,
};
use rt_estim::series::{ObservedSeries, StartLabel, TimeStep};

/// Weighted history sum computed straight from lag weights (no shared code
/// with the model's internal tables).
fn load(incidence: &[f64], weights: &DiscretizedDelay, grid_t: usize, include_lag0: bool) -> f64 {
    let mut s = 0.0;
    for (j, inc) in incidence.iter().enumerate().take(grid_t + 1) {
        let lag = grid_t - j;
        if lag == 0 && !include_lag0 {
            continue;
        }
        s += inc * weights.lag_weight(lag);
    }
    s
}

/// Textbook term-by-term log posterior of the test-aware model.
pub fn oracle_log_posterior_gamma(state: &ParameterState, config: &GammaModelConfig) -> f64 {
    use statrs::distribution::{Exp, Gamma, LogNormal, NegativeBinomial, Normal};

    let p = &config.priors;
    let horizon = config.horizon();
    let seeded = p.seeded_count();

    let incidence: Vec<f64> = state.log_incidence.iter().map(|v| v.exp()).collect();
    let repro: Vec<f64> = state.log_r.iter().map(|v| v.exp()).collect();
    let nu = state.log_nu.exp();
    let sigma = state.log_sigma.exp();
    let rho = state.log_rho.exp();
    let lambda = state.log_lambda.exp();
    let kappa = state.log_kappa.exp();

    let mut lp = 0.0;

    // Seeding hierarchy with log-scale Jacobians.
    lp += Exp::new(p.eta).unwrap().ln_pdf(lambda) + state.log_lambda;
    for j in 0..seeded {
        lp += Exp::new(lambda).unwrap().ln_pdf(incidence[j]) + state.log_incidence[j];
    }

    // Latent gamma process.
    for t in 1..=horizon {
        let grid_t = t + p.seed_len;
        let renewal = load(&incidence, &config.generation, grid_t, false);
        let shape = repro[t - 1] * renewal * nu;
        lp += Gamma::new(shape, nu).unwrap().ln_pdf(incidence[grid_t]) + state.log_incidence[grid_t];
    }

    // Random walk on the log reproduction number.
    lp += Normal::new(p.mu_r1, p.sigma_r1).unwrap().ln_pdf(state.log_r[0]);
    let step_sd = (sigma * sigma / (horizon as f64 - 1.0)).sqrt();
    for t in 2..=horizon {
        lp += Normal::new(state.log_r[t - 2], step_sd).unwrap().ln_pdf(state.log_r[t - 1]);
    }

    // Test-scaled negative binomial emission: NB(r = kappa, p = kappa/(kappa+mu)).
    for t in 1..=horizon {
        let grid_t = t + p.seed_len;
        let reporting = load(&incidence, &config.latent_delay, grid_t, true);
        let mu = rho * config.series.tests[t - 1] as f64 * reporting;
        let nb = NegativeBinomial::new(kappa, kappa / (kappa + mu)).unwrap();
        lp += nb.ln_pmf(config.series.cases[t - 1]);
    }

    // Scalar priors: log-normal densities on the natural scale plus their
    // Jacobians (an independent route to the normal-on-log-scale form).
    lp += LogNormal::new(p.mu_nu, p.sigma_nu).unwrap().ln_pdf(nu) + state.log_nu;
    lp += LogNormal::new(p.mu_sigma, p.sigma_sigma).unwrap().ln_pdf(sigma) + state.log_sigma;
    lp += LogNormal::new(p.mu_rho, p.sigma_rho).unwrap().ln_pdf(rho) + state.log_rho;
    lp += Normal::new(p.mu_kappa, p.sigma_kappa).unwrap().ln_pdf(kappa) + state.log_kappa;

    lp
}

/// Textbook term-by-term log posterior of the test-unaware model.
pub fn oracle_log_posterior_normal(state: &NormalState, config: &NormalModelConfig) -> f64 {
    use statrs::distribution::{Exp, NegativeBinomial, Normal};

    let p = &config.priors;
    let horizon = config.horizon();
    let seeded = p.seeded_count();

    let incidence: Vec<f64> = state.log_incidence.iter().map(|v| v.exp()).collect();
    let repro: Vec<f64> = state.log_r.iter().map(|v| v.exp()).collect();
    let sigma = state.log_sigma.exp();
    let psi = state.log_psi.exp();
    let alpha = state.log_alpha.exp();
    let inv_phi = state.log_inv_phi.exp();
    let phi = 1.0 / inv_phi;
    let lambda = state.log_lambda.exp();

    let mut lp = 0.0;
    lp += Exp::new(p.eta).unwrap().ln_pdf(lambda) + state.log_lambda;
    for j in 0..seeded {
        lp += Exp::new(lambda).unwrap().ln_pdf(incidence[j]) + state.log_incidence[j];
    }

    for t in 1..=horizon {
        let grid_t = t + p.seed_len;
        let m = repro[t - 1] * load(&incidence, &config.generation, grid_t, false);
        lp += Normal::new(m, m * psi).unwrap().ln_pdf(incidence[grid_t]) + state.log_incidence[grid_t];
    }

    lp += Normal::new(p.mu_r1, p.sigma_r1).unwrap().ln_pdf(state.log_r[0]);
    for t in 2..=horizon {
        lp += Normal::new(state.log_r[t - 2], sigma).unwrap().ln_pdf(state.log_r[t - 1]);
    }

    for t in 1..=horizon {
        let grid_t = t + p.seed_len;
        // Lag 0 is excluded from the reporting sum in this model.
        let y = alpha * load(&incidence, &config.latent_delay, grid_t, false);
        let nb = NegativeBinomial::new(phi, phi / (phi + y)).unwrap();
        lp += nb.ln_pmf(config.series.cases[t - 1]);
    }

    lp += Normal::new(p.mu_sigma, p.sigma_sigma).unwrap().ln_pdf(sigma) + state.log_sigma;
    lp += Normal::new(p.mu_psi, p.sigma_psi).unwrap().ln_pdf(psi) + state.log_psi;
    lp += Normal::new(p.mu_alpha, p.sigma_alpha).unwrap().ln_pdf(alpha) + state.log_alpha;
    lp += Normal::new(p.mu_inv_phi, p.sigma_inv_phi).unwrap().ln_pdf(inv_phi) + state.log_inv_phi;

    lp
}

/// Central finite differences with per-coordinate relative step `h_rel`.
pub fn finite_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h_rel: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let h = h_rel * x[i].abs().max(1.0);
            let mut xp = x.to_vec();
            xp[i] += h;
            let mut xm = x.to_vec();
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

/// Synthetic weekly config for the test-aware model: moderate counts keep
/// finite differences well conditioned.
pub fn synthetic_gamma_config(horizon: usize, seed_len: usize, seed: u64) -> GammaModelConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tests: Vec<u64> = (0..horizon).map(|_| rng.random_range(500..2000)).collect();
    let cases: Vec<u64> = tests.iter().map(|&m| rng.random_range(10..m.min(200))).collect();
    let series =
        ObservedSeries::new(StartLabel::Index(1), TimeStep::Weekly, cases, tests).unwrap();

    let max_lag = horizon + seed_len + 1;
    let generation = geometric_kernel(max_lag, 0.45, DelayOffset::One);
    let latent_delay = geometric_kernel(max_lag, 0.55, DelayOffset::Zero);

    GammaModelConfig {
        priors: PriorSet::simulation_defaults(-6.0, 0.4, 30.0, 20.0, seed_len),
        generation,
        latent_delay,
        series,
    }
}

pub fn synthetic_normal_config(horizon: usize, seed_len: usize, seed: u64) -> NormalModelConfig {
    let gamma = synthetic_gamma_config(horizon, seed_len, seed);
    NormalModelConfig {
        priors: NormalPriorSet::simulation_defaults(seed_len),
        generation: gamma.generation,
        latent_delay: gamma.latent_delay,
        series: gamma.series,
    }
}

fn geometric_kernel(len: usize, decay: f64, offset: DelayOffset) -> DiscretizedDelay {
    let weights: Vec<f64> = (0..len).map(|k| (1.0 - decay) * decay.powi(k as i32)).collect();
    DiscretizedDelay::new(weights, offset).unwrap()
}

/// A prior-flavored random state: scalars near their prior centers, a latent
/// path simulated from moderate reproduction numbers. Draws stay in a range
/// where finite differences are trustworthy.
pub fn draw_gamma_state(config: &GammaModelConfig, rng: &mut ChaCha8Rng) -> ParameterState {
    let p = &config.priors;
    let horizon = config.horizon();
    let seeded = p.seeded_count();

    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();

    let log_nu = p.mu_nu + p.sigma_nu * normal.sample(rng);
    let log_sigma = p.mu_sigma + p.sigma_sigma * normal.sample(rng);
    let log_rho = p.mu_rho + p.sigma_rho * normal.sample(rng);
    let lambda: f64 = rand_distr::Exp::new(p.eta).unwrap().sample(rng).max(0.05);
    let kappa = loop {
        let k = p.mu_kappa + p.sigma_kappa * normal.sample(rng);
        if k > 1.0 {
            break k;
        }
    };

    let mut log_incidence = Vec::with_capacity(seeded + horizon);
    for _ in 0..seeded {
        let draw: f64 = rand_distr::Exp::new(lambda).unwrap().sample(rng);
        log_incidence.push(draw.clamp(0.2, 2000.0).ln());
    }
    let mut log_r = Vec::with_capacity(horizon);
    let mut current_log_r: f64 = p.mu_r1 + p.sigma_r1 * 0.3 * normal.sample(rng);
    let step_sd = log_sigma.exp() / (horizon as f64 - 1.0).sqrt();
    for _ in 0..horizon {
        log_r.push(current_log_r);
        current_log_r += step_sd * normal.sample(rng);
        current_log_r = current_log_r.clamp(-1.5, 1.5);
    }

    // Latent path: draw from the gamma conditional given the history.
    let nu = log_nu.exp();
    for t in 1..=horizon {
        let incidence: Vec<f64> = log_incidence.iter().map(|v| v.exp()).collect();
        let grid_t = t + p.seed_len;
        let renewal = load(&incidence, &config.generation, grid_t, false);
        let shape = (log_r[t - 1].exp() * renewal * nu).max(0.2);
        let draw: f64 = rand_distr::Gamma::new(shape, 1.0 / nu).unwrap().sample(rng);
        log_incidence.push(draw.clamp(0.2, 5e4).ln());
    }

    ParameterState {
        log_incidence,
        log_r,
        log_nu,
        log_sigma,
        log_rho,
        log_lambda: lambda.ln(),
        log_kappa: kappa.ln(),
    }
}

pub fn draw_normal_state(config: &NormalModelConfig, rng: &mut ChaCha8Rng) -> NormalState {
    let p = &config.priors;
    let horizon = config.horizon();
    let seeded = p.seeded_count();

    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();

    let sigma = loop {
        let s = p.mu_sigma + p.sigma_sigma * normal.sample(rng);
        if s > 0.005 {
            break s;
        }
    };
    let psi = (p.mu_psi + p.sigma_psi * normal.sample(rng)).max(0.5);
    let alpha = (p.mu_alpha + p.sigma_alpha * normal.sample(rng)).clamp(0.002, 0.5);
    let inv_phi = (p.mu_inv_phi + p.sigma_inv_phi * normal.sample(rng)).max(0.5);
    let lambda: f64 = rand_distr::Exp::new(p.eta).unwrap().sample(rng).max(0.05);

    let mut log_incidence = Vec::with_capacity(seeded + horizon);
    for _ in 0..seeded {
        let draw: f64 = rand_distr::Exp::new(lambda).unwrap().sample(rng);
        log_incidence.push(draw.clamp(0.2, 2000.0).ln());
    }
    let mut log_r = Vec::with_capacity(horizon);
    let mut current: f64 = p.mu_r1 + p.sigma_r1 * normal.sample(rng);
    for _ in 0..horizon {
        log_r.push(current.clamp(-1.0, 1.0));
        current += sigma * normal.sample(rng);
    }

    for t in 1..=horizon {
        let incidence: Vec<f64> = log_incidence.iter().map(|v| v.exp()).collect();
        let grid_t = t + p.seed_len;
        let m = log_r[t - 1].exp() * load(&incidence, &config.generation, grid_t, false);
        // Positive truncation of the very dispersed conditional.
        let draw = loop {
            let v = m + m * psi * normal.sample(rng);
            if v > 0.0 {
                break v;
            }
        };
        log_incidence.push(draw.clamp(0.2, 5e4).ln());
    }

    NormalState {
        log_incidence,
        log_r,
        log_sigma: sigma.ln(),
        log_psi: psi.ln(),
        log_alpha: alpha.ln(),
        log_inv_phi: inv_phi.ln(),
        log_lambda: lambda.ln(),
    }
}
