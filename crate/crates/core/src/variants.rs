//! Robust preprocessing and heteroscedastic scale estimation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::adapt::{fit_with, initial_lambda, AdaptConfig, FitReport, SigmaMode};
use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::multiscale::{dyadic_family, median, prefix_sums, sigma_hat, Interval, IntervalFamily};
use crate::spline::{least_squares_line, solve_weighted, Sample, SplineFit, WeightVector};

/// Outlier rule: replace `y_i` when `|y_i - m5_i| >= OUTLIER_FACTOR · σ`.
pub const OUTLIER_FACTOR: f64 = 3.5;

/// Relative floor applied to the scale fit before it is used as a divisor.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Running median over five neighbours. The two points at either end use
/// the three outermost observations.
pub fn running_median5(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| {
            let (lo, hi) = match i {
                0 | 1 => (0, 2.min(n - 1)),
                _ if i + 2 >= n => (n.saturating_sub(3), n - 1),
                _ => (i - 2, i + 2),
            };
            let mut w = y[lo..=hi].to_vec();
            median(&mut w)
        })
        .collect()
}

/// Cleaned data together with the mask of replaced points.
#[derive(Debug, Clone, PartialEq)]
pub struct Cleaned {
    pub sample: Sample,
    pub replaced: Vec<bool>,
}

impl Cleaned {
    pub fn replaced_count(&self) -> usize {
        self.replaced.iter().filter(|r| **r).count()
    }
}

/// Upper bound on cleaning passes in [`clean_outliers`].
pub const MAX_CLEAN_PASSES: usize = 64;

fn validate_clean(n: usize, sigma: f64) -> Result<()> {
    if n < 5 {
        return invalid(format!("outlier cleaning needs n >= 5, got {n}"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return invalid(format!("sigma must be finite and >= 0, got {sigma}"));
    }
    Ok(())
}

fn clean_pass(y: &mut [f64], limit: f64, replaced: &mut [bool]) -> usize {
    let m5 = running_median5(y);
    let mut count = 0;
    for i in 0..y.len() {
        if (y[i] - m5[i]).abs() >= limit && y[i] != m5[i] {
            y[i] = m5[i];
            replaced[i] = true;
            count += 1;
        }
    }
    count
}

/// A single pass of the running-median rule: every observation deviating
/// from its running median by at least `3.5 σ` is replaced by that median.
pub fn clean_outliers_once(sample: &Sample, sigma: f64) -> Result<Cleaned> {
    validate_clean(sample.len(), sigma)?;
    let mut y = sample.y().to_vec();
    let mut replaced = vec![false; y.len()];
    clean_pass(&mut y, OUTLIER_FACTOR * sigma, &mut replaced);
    Ok(Cleaned {
        sample: sample.with_y(y)?,
        replaced,
    })
}

/// Repeats [`clean_outliers_once`] (with the same `sigma`) until no point
/// changes, so that cleaning the output again is a no-op. When no window
/// of five holds more than two outliers the first pass is usually final.
pub fn clean_outliers(sample: &Sample, sigma: f64) -> Result<Cleaned> {
    validate_clean(sample.len(), sigma)?;
    let mut y = sample.y().to_vec();
    let mut replaced = vec![false; y.len()];
    let limit = OUTLIER_FACTOR * sigma;
    for _ in 0..MAX_CLEAN_PASSES {
        if clean_pass(&mut y, limit, &mut replaced) == 0 {
            break;
        }
    }
    Ok(Cleaned {
        sample: sample.with_y(y)?,
        replaced,
    })
}

/// Result of [`robust_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct RobustFit {
    pub cleaned: Cleaned,
    pub report: FitReport,
}

/// Cleans outliers with the running-median rule and fits the cleaned data.
///
/// σ is taken once from the raw data (or from a fixed `sigma_mode`) and
/// used both for the cleaning threshold and for the region of the fit.
pub fn robust_fit(sample: &Sample, config: &AdaptConfig) -> Result<RobustFit> {
    robust_fit_with(sample, config, Execution::default())
}

pub fn robust_fit_with(
    sample: &Sample,
    config: &AdaptConfig,
    exec: Execution,
) -> Result<RobustFit> {
    config.validate()?;
    let sigma = match config.sigma_mode {
        SigmaMode::Estimated => sigma_hat(sample.y())?,
        SigmaMode::Fixed(s) => s,
    };
    let cleaned = clean_outliers(sample, sigma)?;
    let config = AdaptConfig {
        sigma_mode: SigmaMode::Fixed(sigma),
        ..*config
    };
    let report = fit_with(&cleaned.sample, &config, exec)?;
    Ok(RobustFit { cleaned, report })
}

/// Lower regularized incomplete gamma `P(k/2, x/2)`, the χ²_k distribution function.
pub fn chisq_cdf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * k, 0.5 * x)
    }
}

fn chisq_sf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(0.5 * k, 0.5 * x)
    }
}

fn chisq_ln_pdf(x: f64, k: f64) -> f64 {
    let a = 0.5 * k;
    (a - 1.0) * x.ln() - 0.5 * x - a * std::f64::consts::LN_2 - ln_gamma(a)
}

/// `γ`-quantile of the χ² distribution with `k` degrees of freedom.
///
/// Inverts the regularized incomplete gamma function by safeguarded Newton
/// iteration in `ln x`, working on whichever tail is smaller.
pub fn chisq_quantile(gamma: f64, k: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return invalid(format!("quantile level must lie in (0, 1), got {gamma}"));
    }
    if k < 1 {
        return invalid("degrees of freedom must be >= 1");
    }
    let kf = k as f64;
    let lower = gamma <= 0.5;
    let p = if lower { gamma } else { 1.0 - gamma };
    // tail(u) - p, increasing in u for the lower tail, decreasing otherwise
    let resid = |u: f64| -> f64 {
        let x = u.exp();
        if lower {
            chisq_cdf(x, kf) - p
        } else {
            chisq_sf(x, kf) - p
        }
    };

    // Wilson–Hilferty starting point
    let z = statrs::distribution::ContinuousCDF::inverse_cdf(
        &statrs::distribution::Normal::standard(),
        gamma,
    );
    let c = 2.0 / (9.0 * kf);
    let wh = kf * (1.0 - c + z * c.sqrt()).powi(3);
    let mut u = if wh > 0.0 { wh.ln() } else { (kf * 1e-3).ln() };

    let increasing = lower;
    let above = |r: f64| if increasing { r > 0.0 } else { r < 0.0 };
    let (mut lo, mut hi) = (u, u);
    let mut step = 1.0;
    while above(resid(lo)) {
        lo -= step;
        step *= 2.0;
        if lo < -1400.0 {
            break;
        }
    }
    step = 1.0;
    while !above(resid(hi)) {
        hi += step;
        step *= 2.0;
        if hi > 700.0 {
            break;
        }
    }
    u = u.clamp(lo, hi);
    for _ in 0..200 {
        let r = resid(u);
        if r == 0.0 {
            break;
        }
        if above(r) {
            hi = u;
        } else {
            lo = u;
        }
        let x = u.exp();
        // d tail / du = ± pdf(x) · x
        let slope = (chisq_ln_pdf(x, kf) + u).exp() * if increasing { 1.0 } else { -1.0 };
        let mut next = u - r / slope;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        let done = (next - u).abs() < 1e-15 * u.abs().max(1.0);
        u = next;
        if done || hi - lo < 1e-15 * u.abs().max(1.0) {
            break;
        }
    }
    Ok(u.exp())
}

/// `v = Σ_{i ∈ I} y_i² / s_i²`.
pub fn v_stat(y: &[f64], interval: Interval, s: &[f64]) -> Result<f64> {
    if y.len() != s.len() {
        return invalid("data and scale lengths differ");
    }
    if interval.lo == 0 || interval.hi > y.len() {
        return invalid(format!("interval {interval} out of bounds"));
    }
    let mut v = 0.0;
    for i in interval.range() {
        if !(s[i] > 0.0) {
            return invalid(format!("scale must be positive, got {} at index {i}", s[i]));
        }
        v += y[i] * y[i] / (s[i] * s[i]);
    }
    Ok(v)
}

/// `1 / E|Z|` for standard Gaussian `Z`.
pub const ABS_MEAN_CORRECTION: f64 = 1.253_314_137_315_500_3;

/// Iteration budget suited to [`scale_fit`], which examines one level of the
/// family per step.
pub const SCALE_MAX_ITERATIONS: usize = 1000;

/// Two-sided per-interval coverage and interval family of a scale region.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleRegionSpec {
    pub alpha_n: f64,
    pub family: IntervalFamily,
    /// Fit `|y|·√(π/2)` rather than `|y|`, so that the fitted curve targets
    /// σ(t) instead of `E|Y(t)|`. On by default.
    pub bias_correction: bool,
}

impl ScaleRegionSpec {
    /// Default coverage `1 - n^{-1.5}` over the dyadic family.
    pub fn default_for(n: usize) -> Result<Self> {
        Self::new(1.0 - (n as f64).powf(-1.5), dyadic_family(n)?)
    }

    pub fn new(alpha_n: f64, family: IntervalFamily) -> Result<Self> {
        if !(alpha_n > 0.0 && alpha_n < 1.0) {
            return invalid(format!("coverage must lie in (0, 1), got {alpha_n}"));
        }
        Ok(Self {
            alpha_n,
            family,
            bias_correction: true,
        })
    }

    /// χ² band `[qu((1-α)/2, k), qu((1+α)/2, k)]`.
    pub fn band(&self, k: usize) -> Result<(f64, f64)> {
        let tail = 0.5 * (1.0 - self.alpha_n);
        Ok((chisq_quantile(tail, k)?, chisq_quantile(1.0 - tail, k)?))
    }
}

/// Smooth scale estimate produced by [`scale_fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleFit {
    pub s: SplineFit,
    pub weights: Option<WeightVector>,
    pub pass: bool,
    pub iterations: usize,
    pub truncated: bool,
    /// Input carries no scale information (all responses zero).
    pub degenerate: bool,
    /// Divisor floor actually used, `1e-8 · max|y|`.
    pub floor: f64,
}

impl ScaleFit {
    /// Scale values at the knots, floored as in the region test.
    pub fn floored_values(&self) -> Vec<f64> {
        self.s.values.iter().map(|v| v.max(self.floor)).collect()
    }
}

/// Interval violating the χ² band, with its statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleViolation {
    pub interval: Interval,
    pub v: f64,
}

/// Band violations of `s` on the given intervals.
///
/// `s` is expected to be floored already. An interval where `s` sits at the
/// floor throughout cannot raise its `v` by lowering `s` any further, so a
/// lower-band miss there is not reported.
pub fn scale_violations(
    y: &[f64],
    s: &[f64],
    floor: f64,
    intervals: &[Interval],
    bands: &mut BandCache<'_>,
) -> Result<Vec<ScaleViolation>> {
    let prefix = prefix_sums(y.iter().zip(s).map(|(y, s)| y * y / (s * s)));
    let above = prefix_sums(s.iter().map(|s| if *s > floor { 1.0 } else { 0.0 }));
    let mut out = Vec::new();
    for &iv in intervals {
        let v = prefix[iv.hi] - prefix[iv.lo - 1];
        let (lo, hi) = bands.get(iv.len())?;
        let at_floor = above[iv.hi] - above[iv.lo - 1] == 0.0;
        if (v < lo && !at_floor) || v > hi {
            out.push(ScaleViolation { interval: iv, v });
        }
    }
    Ok(out)
}

/// Memoised χ² bands by interval length.
pub struct BandCache<'a> {
    spec: &'a ScaleRegionSpec,
    cache: HashMap<usize, (f64, f64)>,
}

impl<'a> BandCache<'a> {
    pub fn new(spec: &'a ScaleRegionSpec) -> Self {
        Self {
            spec,
            cache: HashMap::new(),
        }
    }

    pub fn get(&mut self, k: usize) -> Result<(f64, f64)> {
        if let Some(b) = self.cache.get(&k) {
            return Ok(*b);
        }
        let b = self.spec.band(k)?;
        self.cache.insert(k, b);
        Ok(b)
    }
}

/// Weighted smoothing spline fit to `|y_i|` (times `√(π/2)` when
/// [`ScaleRegionSpec::bias_correction`] is set), with weights raised on
/// intervals whose `v` statistic leaves its χ² band. Levels of the family are
/// swept shortest first: a level is only examined once every shorter level
/// is satisfied.
pub fn scale_fit(
    sample: &Sample,
    spec: &ScaleRegionSpec,
    config: &AdaptConfig,
) -> Result<ScaleFit> {
    config.validate()?;
    let n = sample.len();
    if n < 8 {
        return invalid(format!("scale fit needs n >= 8, got {n}"));
    }
    if spec.family.n() != n {
        return invalid("interval family does not match sample size");
    }
    let y = sample.y();
    let factor = if spec.bias_correction {
        ABS_MEAN_CORRECTION
    } else {
        1.0
    };
    let abs = sample.with_y(y.iter().map(|v| v.abs() * factor).collect())?;
    let max_abs = y.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let floor = SCALE_FLOOR * max_abs;
    let (a, b) = least_squares_line(&abs);
    let line = SplineFit::affine(abs.t(), a, b);
    if max_abs == 0.0 {
        return Ok(ScaleFit {
            s: line,
            weights: None,
            pass: false,
            iterations: 0,
            truncated: false,
            degenerate: true,
            floor,
        });
    }

    let mut bands = BandCache::new(spec);
    let first_violating_level =
        |s: &SplineFit, bands: &mut BandCache<'_>| -> Result<Option<Vec<ScaleViolation>>> {
            let floored: Vec<f64> = s.values.iter().map(|v| v.max(floor)).collect();
            for level in spec.family.levels() {
                let v = scale_violations(y, &floored, floor, level, bands)?;
                if !v.is_empty() {
                    return Ok(Some(v));
                }
            }
            Ok(None)
        };

    if first_violating_level(&line, &mut bands)?.is_none() {
        return Ok(ScaleFit {
            s: line,
            weights: None,
            pass: true,
            iterations: 0,
            truncated: false,
            degenerate: false,
            floor,
        });
    }

    let lambda1 = initial_lambda(&abs, &line, config.init_tolerance)?;
    let mut weights = WeightVector::constant(n, lambda1)?;
    let mut iteration = 0;
    loop {
        iteration += 1;
        let s = solve_weighted(&abs, &weights)?;
        let violations = first_violating_level(&s, &mut bands)?;
        let done = violations.is_none();
        if done || iteration >= config.max_iterations {
            return Ok(ScaleFit {
                s,
                weights: Some(weights),
                pass: done,
                iterations: iteration,
                truncated: !done,
                degenerate: false,
                floor,
            });
        }
        let mut mask = vec![false; n];
        for v in violations.unwrap() {
            mask[v.interval.range()].iter_mut().for_each(|m| *m = true);
        }
        weights.scale_where(&mask, config.q);
    }
}
