//! Split rank-normalized Rhat and bulk/tail effective sample sizes, following
//! the Stan reference computations.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sampler::PosteriorDraws;
use crate::stats::{mean, quantile, sample_variance, std_normal_quantile};

/// Sentinel returned when within-chain variance collapses while chains still
/// disagree (Rhat would be infinite).
const RHAT_DEGENERATE: f64 = 1e6;

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub names: Vec<String>,
    pub rhat: Vec<f64>,
    pub ess_bulk: Vec<f64>,
    pub ess_tail: Vec<f64>,
}

impl Diagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_ess_bulk(&self) -> f64 {
        self.ess_bulk.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_ess_tail(&self) -> f64 {
        self.ess_tail.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Convergence gate: max Rhat below 1.05, bulk and tail ESS above 100.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceVerdict {
    pub pass: bool,
    pub max_rhat: f64,
    pub min_ess_bulk: f64,
    pub min_ess_tail: f64,
    pub rhat_limit: f64,
    pub ess_limit: f64,
}

pub fn convergence_verdict(diag: &Diagnostics) -> ConvergenceVerdict {
    let rhat_limit = 1.05;
    let ess_limit = 100.0;
    let max_rhat = diag.max_rhat();
    let min_ess_bulk = diag.min_ess_bulk();
    let min_ess_tail = diag.min_ess_tail();
    ConvergenceVerdict {
        pass: max_rhat < rhat_limit && min_ess_bulk > ess_limit && min_ess_tail > ess_limit,
        max_rhat,
        min_ess_bulk,
        min_ess_tail,
        rhat_limit,
        ess_limit,
    }
}

/// Split-chain, rank-normalized diagnostics for every parameter.
pub fn diagnostics(draws: &PosteriorDraws) -> Result<Diagnostics> {
    if draws.chains() < 2 {
        return Err(Error::NotEnoughDraws { what: "chains", needed: 2, got: draws.chains() });
    }
    if draws.retained() < 4 {
        return Err(Error::NotEnoughDraws {
            what: "retained draws per chain",
            needed: 4,
            got: draws.retained(),
        });
    }

    let mut rhat = Vec::with_capacity(draws.dim());
    let mut ess_bulk = Vec::with_capacity(draws.dim());
    let mut ess_tail = Vec::with_capacity(draws.dim());
    for p in 0..draws.dim() {
        let series = draws.parameter_series(p);
        let split = split_chains(&series);

        let z = rank_normalize(&split);
        let folded = rank_normalize(&fold(&split));
        rhat.push(basic_rhat(&z).max(basic_rhat(&folded)));
        ess_bulk.push(effective_sample_size(&z));
        ess_tail.push(tail_ess(&split));
    }

    Ok(Diagnostics { names: draws.names.clone(), rhat, ess_bulk, ess_tail })
}

/// Halve each chain, dropping the middle draw when the length is odd.
fn split_chains(series: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(series.len() * 2);
    for chain in series {
        let half = chain.len() / 2;
        out.push(chain[..half].to_vec());
        out.push(chain[chain.len() - half..].to_vec());
    }
    out
}

/// Fold around the pooled median (for scale-sensitive Rhat).
fn fold(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = quantile(&pooled, 0.5);
    chains
        .iter()
        .map(|c| c.iter().map(|v| (v - med).abs()).collect())
        .collect()
}

/// Average-rank transform followed by the inverse normal CDF (Blom offsets).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n_per: Vec<usize> = chains.iter().map(|c| c.len()).collect();
    let total: usize = n_per.iter().sum();
    let mut indexed: Vec<(f64, usize)> = Vec::with_capacity(total);
    let mut flat_index = 0usize;
    for chain in chains {
        for &v in chain {
            indexed.push((v, flat_index));
            flat_index += 1;
        }
    }
    indexed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && indexed[j + 1].0 == indexed[i].0 {
            j += 1;
        }
        // Average rank over the tie group (1-based ranks).
        let avg = (i + j + 2) as f64 / 2.0;
        for item in &indexed[i..=j] {
            ranks[item.1] = avg;
        }
        i = j + 1;
    }

    let s = total as f64;
    let mut out = Vec::with_capacity(chains.len());
    let mut k = 0usize;
    for &len in &n_per {
        let z: Vec<f64> = (0..len)
            .map(|_| {
                let r = ranks[k];
                k += 1;
                std_normal_quantile((r - 0.375) / (s + 0.25))
            })
            .collect();
        out.push(z);
    }
    out
}

/// Classic potential-scale-reduction on already-split chains.
fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 2 {
        return RHAT_DEGENERATE;
    }
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let chain_vars: Vec<f64> = chains.iter().map(|c| sample_variance(&c[..n])).collect();
    let within = mean(&chain_vars);
    let between = n as f64 * sample_variance(&chain_means);
    if within <= 1e-300 {
        return if between > 1e-300 { RHAT_DEGENERATE } else { 1.0 };
    }
    let var_hat = (n as f64 - 1.0) / n as f64 * within + between / n as f64;
    (var_hat / within).sqrt()
}

/// Stan-style combined-autocovariance ESS with Geyer's initial monotone
/// sequence; the estimate is capped at `N log10 N`.
fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return f64::NAN;
    }
    let total = (m * n) as f64;

    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(&c[..n])).collect();
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let chain_vars: Vec<f64> = acov.iter().map(|a| a[0] * n as f64 / (n as f64 - 1.0)).collect();
    let mean_var = mean(&chain_vars);
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += sample_variance(&chain_means);
    }
    if var_plus <= 1e-300 {
        // Constant draws carry no autocorrelation information; report the
        // nominal size.
        return total;
    }

    let mean_acov = |t: usize| -> f64 { mean(&acov.iter().map(|a| a[t]).collect::<Vec<_>>()) };

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
    rho_hat[1] = rho_odd;
    let mut t = 1usize;
    while t < n - 4 && rho_even + rho_odd > 0.0 {
        rho_even = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - mean_acov(t + 2)) / var_plus;
        if rho_even + rho_odd >= 0.0 {
            rho_hat[t + 1] = rho_even;
            rho_hat[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 {
        rho_hat[max_t + 1] = rho_even;
    }

    // Geyer initial monotone sequence.
    let mut t = 1usize;
    while t + 2 <= max_t {
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t] {
            rho_hat[t + 1] = (rho_hat[t - 1] + rho_hat[t]) / 2.0;
            rho_hat[t + 2] = rho_hat[t + 1];
        }
        t += 2;
    }

    let tau = -1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + rho_hat[max_t];
    if tau <= 0.0 {
        return total;
    }
    (total / tau).min(total * total.log10())
}

/// Minimum ESS of the 5% and 95% tail indicator series.
fn tail_ess(chains: &[Vec<f64>]) -> f64 {
    let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q05 = quantile(&pooled, 0.05);
    let q95 = quantile(&pooled, 0.95);
    let ess_at = |cut: f64| -> f64 {
        let indicators: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.iter().map(|&v| if v <= cut { 1.0 } else { 0.0 }).collect())
            .collect();
        effective_sample_size(&indicators)
    };
    ess_at(q05).min(ess_at(q95))
}

/// Biased autocovariance (divide by n), as used for ESS estimation.
fn autocovariance(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    let m = mean(series);
    let centered: Vec<f64> = series.iter().map(|v| v - m).collect();
    (0..n)
        .map(|lag| {
            let mut s = 0.0;
            for i in 0..n - lag {
                s += centered[i] * centered[i + lag];
            }
            s / n as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fake_draws(chains: Vec<Vec<f64>>) -> PosteriorDraws {
        PosteriorDraws {
            names: vec!["x".into()],
            draws: chains
                .into_iter()
                .map(|c| c.into_iter().map(|v| vec![v]).collect())
                .collect(),
            divergences: vec![0, 0],
            mean_accept: vec![0.9, 0.9],
            step_sizes: vec![0.5, 0.5],
        }
    }

    fn gaussian_chains(chains: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..chains)
            .map(|_| {
                (0..len)
                    .map(|_| {
                        let u: f64 = rng.random();
                        let v: f64 = rng.random();
                        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn iid_chains_have_rhat_near_one() {
        let draws = fake_draws(gaussian_chains(4, 1000, 11));
        let diag = diagnostics(&draws).unwrap();
        assert!(diag.rhat[0] >= 1.0 - 1e-3, "rhat {}", diag.rhat[0]);
        assert!(diag.rhat[0] <= 1.02, "rhat {}", diag.rhat[0]);
    }

    #[test]
    fn constant_distinct_chains_hit_sentinel() {
        let draws = fake_draws(vec![vec![1.0; 100], vec![2.0; 100]]);
        let diag = diagnostics(&draws).unwrap();
        assert!(diag.rhat[0].is_finite());
        assert!(diag.rhat[0] >= 1e5, "rhat {}", diag.rhat[0]);
    }

    #[test]
    fn white_noise_ess_near_total() {
        let n = 1000;
        let chains = 4;
        let draws = fake_draws(gaussian_chains(chains, n, 5));
        let diag = diagnostics(&draws).unwrap();
        let total = (n * chains) as f64;
        assert!(
            (diag.ess_bulk[0] - total).abs() < 0.2 * total,
            "bulk ESS {} vs nominal {total}",
            diag.ess_bulk[0]
        );
        assert!(diag.ess_tail[0] > 0.0);
    }

    #[test]
    fn correlated_chains_have_smaller_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let make_ar = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let mut x = 0.0;
            (0..1000)
                .map(|_| {
                    let u: f64 = rng.random();
                    let v: f64 = rng.random();
                    let z = (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos();
                    x = 0.9 * x + z;
                    x
                })
                .collect()
        };
        let chains = vec![make_ar(&mut rng), make_ar(&mut rng)];
        let draws = fake_draws(chains);
        let diag = diagnostics(&draws).unwrap();
        assert!(diag.ess_bulk[0] < 600.0, "AR(0.9) ESS {}", diag.ess_bulk[0]);
    }

    #[test]
    fn single_chain_is_an_error() {
        let draws = PosteriorDraws {
            names: vec!["x".into()],
            draws: vec![vec![vec![0.0]; 50]],
            divergences: vec![0],
            mean_accept: vec![0.9],
            step_sizes: vec![0.1],
        };
        assert!(diagnostics(&draws).is_err());
    }

    #[test]
    fn verdict_thresholds() {
        let diag = Diagnostics {
            names: vec!["a".into()],
            rhat: vec![1.01],
            ess_bulk: vec![500.0],
            ess_tail: vec![400.0],
        };
        assert!(convergence_verdict(&diag).pass);
        let diag = Diagnostics {
            names: vec!["a".into()],
            rhat: vec![1.06],
            ess_bulk: vec![500.0],
            ess_tail: vec![400.0],
        };
        assert!(!convergence_verdict(&diag).pass);
    }
}
