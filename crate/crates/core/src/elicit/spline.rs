//! Penalized cubic B-spline negative-binomial regression of cases on time,
//! sampled with the crate's own no-U-turn sampler. Only the over-dispersion
//! posterior is consumed downstream.

use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::sampler::LogDensity;
use crate::stats::neg_binom_ln_pmf;

/// Evaluate an open-uniform B-spline basis of the given degree on integer
/// time points `0..n_points`, with `interior_knots` equally spaced interior
/// knots. Returns the design matrix `[n_points][n_basis]`.
pub fn bspline_design(n_points: usize, degree: usize, interior_knots: usize) -> Vec<Vec<f64>> {
    let lo = 0.0;
    let hi = (n_points - 1) as f64;
    let mut knots = Vec::with_capacity(interior_knots + 2 * (degree + 1));
    for _ in 0..=degree {
        knots.push(lo);
    }
    for k in 1..=interior_knots {
        knots.push(lo + (hi - lo) * k as f64 / (interior_knots + 1) as f64);
    }
    for _ in 0..=degree {
        knots.push(hi);
    }
    let n_basis = interior_knots + degree + 1;

    (0..n_points)
        .map(|i| {
            let x = i as f64;
            (0..n_basis).map(|j| cox_de_boor(&knots, j, degree, x)).collect()
        })
        .collect()
}

fn cox_de_boor(knots: &[f64], j: usize, degree: usize, x: f64) -> f64 {
    // Clamp the right edge so the final basis function is 1 at the boundary.
    let last = knots[knots.len() - 1];
    if x >= last {
        let n_basis = knots.len() - degree - 1;
        return if j == n_basis - 1 { 1.0 } else { 0.0 };
    }
    if degree == 0 {
        return if knots[j] <= x && x < knots[j + 1] { 1.0 } else { 0.0 };
    }
    let mut value = 0.0;
    let denom_left = knots[j + degree] - knots[j];
    if denom_left > 0.0 {
        value += (x - knots[j]) / denom_left * cox_de_boor(knots, j, degree - 1, x);
    }
    let denom_right = knots[j + degree + 1] - knots[j + 1];
    if denom_right > 0.0 {
        value += (knots[j + degree + 1] - x) / denom_right * cox_de_boor(knots, j + 1, degree - 1, x);
    }
    value
}

/// Negative-binomial spline regression target in unconstrained coordinates:
/// spline coefficients followed by the log over-dispersion.
pub struct NegBinSplineModel {
    design: Vec<Vec<f64>>,
    cases: Vec<u64>,
    ridge_penalty: f64,
    /// Weak normal prior scale on the coefficients (keeps the target proper).
    coef_scale: f64,
    /// Prior scale on the log over-dispersion.
    log_kappa_scale: f64,
}

impl NegBinSplineModel {
    pub fn new(cases: &[u64], degree: usize, interior_knots: usize, ridge_penalty: f64) -> Result<Self> {
        if cases.len() < interior_knots + degree + 2 {
            return Err(Error::InvalidConfig(format!(
                "{} observations cannot support {} basis functions",
                cases.len(),
                interior_knots + degree + 1
            )));
        }
        if !(ridge_penalty > 0.0) {
            return Err(Error::InvalidConfig("ridge penalty must be positive".into()));
        }
        Ok(NegBinSplineModel {
            design: bspline_design(cases.len(), degree, interior_knots),
            cases: cases.to_vec(),
            ridge_penalty,
            coef_scale: 10.0,
            log_kappa_scale: 3.0,
        })
    }

    pub fn n_basis(&self) -> usize {
        self.design[0].len()
    }

    /// A reasonable starting point: a flat curve at the mean case count.
    pub fn flat_init(&self) -> Vec<f64> {
        let mean = self.cases.iter().sum::<u64>() as f64 / self.cases.len() as f64;
        let mut init = vec![mean.max(1.0).ln(); self.n_basis()];
        init.push(10.0f64.ln());
        init
    }
}

impl LogDensity for NegBinSplineModel {
    fn dim(&self) -> usize {
        self.n_basis() + 1
    }

    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        if position.iter().any(|v| !v.is_finite() || v.abs() > 400.0) {
            return f64::NEG_INFINITY;
        }
        let k = self.n_basis();
        let coef = &position[..k];
        let log_kappa = position[k];
        let kappa = log_kappa.exp();

        let mut logp = 0.0;
        for (t, row) in self.design.iter().enumerate() {
            let eta: f64 = row.iter().zip(coef).map(|(b, c)| b * c).sum();
            let mu = eta.exp();
            let o = self.cases[t] as f64;
            logp += neg_binom_ln_pmf(self.cases[t], mu, kappa);
            if mu > 0.0 {
                let factor = o - (kappa + o) * mu / (kappa + mu);
                for (g, b) in grad[..k].iter_mut().zip(row) {
                    *g += factor * b;
                }
                grad[k] += kappa
                    * (digamma(o + kappa) - digamma(kappa) + log_kappa + 1.0
                        - (kappa + mu).ln()
                        - (kappa + o) / (kappa + mu));
            }
        }

        // Ridge on second differences of the coefficients.
        for i in 0..k.saturating_sub(2) {
            let r = coef[i + 2] - 2.0 * coef[i + 1] + coef[i];
            logp -= 0.5 * self.ridge_penalty * r * r;
            grad[i] -= self.ridge_penalty * r;
            grad[i + 1] += 2.0 * self.ridge_penalty * r;
            grad[i + 2] -= self.ridge_penalty * r;
        }

        // Weak proper priors.
        let cs2 = self.coef_scale * self.coef_scale;
        for (i, c) in coef.iter().enumerate() {
            logp -= 0.5 * c * c / cs2;
            grad[i] -= c / cs2;
        }
        let ks2 = self.log_kappa_scale * self.log_kappa_scale;
        logp -= 0.5 * log_kappa * log_kappa / ks2;
        grad[k] -= log_kappa / ks2;

        if !logp.is_finite() {
            grad.fill(0.0);
            return f64::NEG_INFINITY;
        }
        logp
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.n_basis()).map(|i| format!("coef[{i}]")).collect();
        names.push("log_kappa".into());
        names
    }
}
