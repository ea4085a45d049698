//! Frequentist evaluation of estimator output against simulation truth:
//! interval coverage (envelope), mean credible-interval width, absolute
//! deviation of medians, and mean absolute sequential variation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::quantile;

/// Per-time-point posterior summaries of one method on one data set.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateSeries {
    /// Time indices the estimates refer to (1-based step or week numbers).
    pub t: Vec<usize>,
    pub median: Vec<f64>,
    pub lower95: Vec<f64>,
    pub upper95: Vec<f64>,
}

impl EstimateSeries {
    pub fn new(t: Vec<usize>, median: Vec<f64>, lower95: Vec<f64>, upper95: Vec<f64>) -> Result<Self> {
        let n = t.len();
        if median.len() != n || lower95.len() != n || upper95.len() != n {
            return Err(Error::DimensionMismatch("estimate series columns differ in length".into()));
        }
        for i in 0..n {
            if !(lower95[i] <= median[i] && median[i] <= upper95[i]) {
                return Err(Error::InvalidConfig(format!(
                    "interval at t={} is not ordered: ({}, {}, {})",
                    t[i], lower95[i], median[i], upper95[i]
                )));
            }
        }
        Ok(EstimateSeries { t, median, lower95, upper95 })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Restrict to the given time points (in their order).
    pub fn restrict_to(&self, keep: &[usize]) -> Result<EstimateSeries> {
        let mut t = Vec::with_capacity(keep.len());
        let mut median = Vec::with_capacity(keep.len());
        let mut lower95 = Vec::with_capacity(keep.len());
        let mut upper95 = Vec::with_capacity(keep.len());
        for &k in keep {
            let i = self
                .t
                .iter()
                .position(|&ti| ti == k)
                .ok_or_else(|| Error::InvalidConfig(format!("no estimate at time {k}")))?;
            t.push(k);
            median.push(self.median[i]);
            lower95.push(self.lower95[i]);
            upper95.push(self.upper95[i]);
        }
        EstimateSeries::new(t, median, lower95, upper95)
    }
}

/// Time points at which every method has an estimate, in ascending order.
pub fn common_time_points(methods: &[&EstimateSeries]) -> Vec<usize> {
    let mut common: Option<Vec<usize>> = None;
    for m in methods {
        let set: Vec<usize> = m.t.clone();
        common = Some(match common {
            None => set,
            Some(prev) => prev.into_iter().filter(|t| set.contains(t)).collect(),
        });
    }
    let mut v = common.unwrap_or_default();
    v.sort_unstable();
    v
}

/// Fraction of time points whose closed 95% interval captures the truth.
pub fn envelope(est: &EstimateSeries, truth: &[f64]) -> Result<f64> {
    if truth.len() != est.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} truth values for {} estimates",
            truth.len(),
            est.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::InvalidConfig("empty estimate series".into()));
    }
    let hits = est
        .t
        .iter()
        .enumerate()
        .filter(|(i, _)| est.lower95[*i] <= truth[*i] && truth[*i] <= est.upper95[*i])
        .count();
    Ok(hits as f64 / est.len() as f64)
}

/// Mean 95% credible-interval width.
pub fn mciw(est: &EstimateSeries) -> f64 {
    if est.is_empty() {
        return f64::NAN;
    }
    est.upper95
        .iter()
        .zip(&est.lower95)
        .map(|(u, l)| u - l)
        .sum::<f64>()
        / est.len() as f64
}

/// Mean absolute difference between the posterior median and the truth.
pub fn absolute_deviation(est: &EstimateSeries, truth: &[f64]) -> Result<f64> {
    if truth.len() != est.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} truth values for {} estimates",
            truth.len(),
            est.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::InvalidConfig("empty estimate series".into()));
    }
    Ok(est
        .median
        .iter()
        .zip(truth)
        .map(|(m, t)| (m - t).abs())
        .sum::<f64>()
        / est.len() as f64)
}

/// Mean absolute step-to-step variation of a median series. Applied to the
/// truth itself this gives the reference line against which each method's
/// smoothness is judged.
pub fn masv(medians: &[f64]) -> f64 {
    if medians.len() < 2 {
        return 0.0;
    }
    medians
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .sum::<f64>()
        / (medians.len() - 1) as f64
}

/// Tukey box summary: median, quartiles, and whiskers at the most extreme
/// data points within 1.5 IQR of the hinges.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoxplotSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

pub fn summarize_replicates(values: &[f64]) -> Result<BoxplotSummary> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("no replicate values to summarize".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile(&sorted, 0.25);
    let median = quantile(&sorted, 0.5);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let whisker_low = sorted.iter().copied().find(|v| *v >= lo_fence).unwrap_or(sorted[0]);
    let whisker_high = sorted
        .iter()
        .rev()
        .copied()
        .find(|v| *v <= hi_fence)
        .unwrap_or(*sorted.last().unwrap());
    Ok(BoxplotSummary { median, q1, q3, whisker_low, whisker_high })
}
