//! Multiscale residual tests.
//!
//! The dyadic interval family, the normalized interval residual sums `w`,
//! the difference-based noise estimate, Monte Carlo calibration of the
//! threshold constant and the region membership check.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::{stream_rng, Execution};

/// Default threshold constant used when no calibration is requested.
pub const DEFAULT_TAU: f64 = 3.0;

/// Upper 0.99 quantile of the standard normal distribution.
const Z_99: f64 = 2.3263;

/// Consistency factor of the median absolute deviation for Gaussian data.
const MAD_SCALE: f64 = 1.4826;

/// Index interval, 1-based and inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub lo: usize,
    pub hi: usize,
}

impl Interval {
    pub fn new(lo: usize, hi: usize) -> Self {
        debug_assert!(1 <= lo && lo <= hi);
        Self { lo, hi }
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Zero-based half-open index range.
    pub fn range(&self) -> std::ops::Range<usize> {
        self.lo - 1..self.hi
    }
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Multiscale family of index intervals over `{1, …, n}`.
///
/// Intervals are grouped by level (block length 1, 2, 4, …, then the full
/// range); `levels[k]` is the slice of `intervals` belonging to level `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalFamily {
    n: usize,
    intervals: Vec<Interval>,
    levels: Vec<std::ops::Range<usize>>,
}

impl IntervalFamily {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Intervals of level `k` (block length `2^k`, the last level being the
    /// whole index range).
    pub fn level(&self, k: usize) -> &[Interval] {
        &self.intervals[self.levels[k].clone()]
    }

    pub fn levels(&self) -> impl Iterator<Item = &[Interval]> {
        self.levels.iter().map(|r| &self.intervals[r.clone()])
    }
}

/// Haar-type dyadic family: disjoint blocks of length 1, 2, 4, … with a
/// trailing shorter block whenever `n` is not a multiple of the length,
/// topped by the full range `[1, n]`.
pub fn dyadic_family(n: usize) -> Result<IntervalFamily> {
    if n == 0 {
        return invalid("interval family needs n >= 1");
    }
    let mut intervals = Vec::new();
    let mut levels = Vec::new();
    let mut k = 1;
    while k < n {
        let start = intervals.len();
        let mut lo = 1;
        while lo <= n {
            intervals.push(Interval::new(lo, (lo + k - 1).min(n)));
            lo += k;
        }
        levels.push(start..intervals.len());
        k *= 2;
    }
    let start = intervals.len();
    intervals.push(Interval::new(1, n));
    levels.push(start..intervals.len());
    Ok(IntervalFamily {
        n,
        intervals,
        levels,
    })
}

/// Cumulative sums with a leading zero, so that the sum over a 1-based
/// interval `[lo, hi]` is `p[hi] - p[lo - 1]`.
pub(crate) fn prefix_sums(v: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut acc = 0.0;
    for x in v {
        acc += x;
        out.push(acc);
    }
    out
}

#[inline]
fn interval_stat(prefix: &[f64], iv: Interval) -> f64 {
    (prefix[iv.hi] - prefix[iv.lo - 1]) / (iv.len() as f64).sqrt()
}

/// `w = |I|^{-1/2} Σ_{i ∈ I} (y_i - g_i)`.
pub fn w_stat(y: &[f64], fit_values: &[f64], interval: Interval) -> Result<f64> {
    if y.len() != fit_values.len() {
        return invalid("data and fit lengths differ");
    }
    if interval.lo == 0 || interval.hi > y.len() || interval.lo > interval.hi {
        return invalid(format!(
            "interval {interval} out of bounds for n = {}",
            y.len()
        ));
    }
    let sum: f64 = interval.range().map(|i| y[i] - fit_values[i]).sum();
    Ok(sum / (interval.len() as f64).sqrt())
}

/// Plain median; averages the two central order statistics for even counts.
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Noise level from the median absolute first difference,
/// `1.4826 / √2 · MED{|y_i - y_{i-1}| : i = 2, …, n-1}`.
pub fn sigma_hat(y: &[f64]) -> Result<f64> {
    let n = y.len();
    if n < 3 {
        return invalid(format!("noise estimate needs n >= 3, got {n}"));
    }
    let mut diffs: Vec<f64> = (1..n - 1).map(|i| (y[i] - y[i - 1]).abs()).collect();
    Ok(MAD_SCALE / std::f64::consts::SQRT_2 * median(&mut diffs))
}

/// Noise level, threshold constant and sample size of a confidence region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub sigma: f64,
    pub tau: f64,
    pub n: usize,
}

impl RegionSpec {
    pub fn new(sigma: f64, tau: f64, n: usize) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return invalid(format!("sigma must be finite and >= 0, got {sigma}"));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return invalid(format!("tau must be positive, got {tau}"));
        }
        if n < 1 {
            return invalid("n must be >= 1");
        }
        Ok(Self { sigma, tau, n })
    }

    /// `σ √(τ ln n)`.
    pub fn threshold(&self) -> f64 {
        self.sigma * (self.tau * (self.n as f64).ln()).sqrt()
    }
}

/// Interval whose normalized residual sum exceeds the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub interval: Interval,
    pub w: f64,
}

/// Outcome of a region membership test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub pass: bool,
    pub max_abs_w: f64,
    pub threshold: f64,
    /// Sorted by `|w|`, largest first.
    pub violations: Vec<Violation>,
}

/// Checks `max_{I} |w(y, I, g)| <= σ √(τ ln n)`.
pub fn in_region(
    y: &[f64],
    fit_values: &[f64],
    family: &IntervalFamily,
    spec: &RegionSpec,
) -> Result<Membership> {
    if y.len() != fit_values.len() || y.len() != family.n() {
        return invalid(format!(
            "length mismatch: data {}, fit {}, family {}",
            y.len(),
            fit_values.len(),
            family.n()
        ));
    }
    let prefix = prefix_sums(y.iter().zip(fit_values).map(|(y, g)| y - g));
    let threshold = spec.threshold();
    let mut max_abs_w = 0.0_f64;
    let mut violations = Vec::new();
    for &iv in family.intervals() {
        let w = interval_stat(&prefix, iv);
        max_abs_w = max_abs_w.max(w.abs());
        if w.abs() > threshold {
            violations.push(Violation { interval: iv, w });
        }
    }
    violations.sort_by(|a, b| b.w.abs().partial_cmp(&a.w.abs()).unwrap());
    Ok(Membership {
        pass: violations.is_empty(),
        max_abs_w,
        threshold,
        violations,
    })
}

/// `max_I |Σ_{i∈I} z_i| / √|I|` for one noise vector.
pub fn max_normalized_sum(z: &[f64], family: &IntervalFamily) -> f64 {
    let prefix = prefix_sums(z.iter().copied());
    family
        .intervals()
        .iter()
        .map(|&iv| interval_stat(&prefix, iv).abs())
        .fold(0.0, f64::max)
}

/// Settings for the white-noise calibration of `τ_n(α)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
}

/// Smallest replicate count accepted by [`calibrate_tau`].
pub const MIN_CALIBRATION_REPLICATES: usize = 1000;

/// Calibrates `τ` so that white noise stays in the region with
/// probability `α`: the `⌈α·R⌉`-th order statistic of the simulated maxima,
/// squared and divided by `ln n`.
pub fn calibrate_tau(family: &IntervalFamily, cal: Calibration) -> Result<f64> {
    calibrate_tau_with(family, cal, Execution::default())
}

pub fn calibrate_tau_with(
    family: &IntervalFamily,
    cal: Calibration,
    exec: Execution,
) -> Result<f64> {
    let n = family.n();
    if !(cal.alpha > 0.0 && cal.alpha < 1.0) {
        return invalid(format!("alpha must lie in (0, 1), got {}", cal.alpha));
    }
    if cal.replicates < MIN_CALIBRATION_REPLICATES {
        return invalid(format!(
            "calibration needs at least {MIN_CALIBRATION_REPLICATES} replicates, got {}",
            cal.replicates
        ));
    }
    if n < 2 {
        return invalid("calibration needs n >= 2");
    }
    let mut maxima = exec.map_indexed(cal.replicates, |r| {
        let mut rng = stream_rng(cal.seed, r as u64);
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        max_normalized_sum(&z, family)
    });
    maxima.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = (cal.alpha * cal.replicates as f64).ceil() as usize;
    let q = maxima[k.clamp(1, cal.replicates) - 1];
    Ok(q * q / (n as f64).ln())
}

/// Interval scheme used by [`min_detectable_delta`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    All,
    Dyadic,
}

/// Smallest deviation over an interval of `interval_size` points that is
/// detected with probability at least `α - 0.01`.
pub fn min_detectable_delta(
    n: usize,
    interval_size: usize,
    sigma: f64,
    tau: f64,
    scheme: Scheme,
) -> Result<f64> {
    if interval_size < 1 {
        return invalid("interval size must be >= 1");
    }
    if n < 1 {
        return invalid("n must be >= 1");
    }
    let base = sigma * ((tau * (n as f64).ln()).sqrt() + Z_99) / (interval_size as f64).sqrt();
    Ok(match scheme {
        Scheme::All => base,
        Scheme::Dyadic => std::f64::consts::SQRT_2 * base,
    })
}
