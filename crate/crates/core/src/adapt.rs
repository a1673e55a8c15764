//! Weight adaptation for the weighted smoothing spline.
//!
//! Starting from the least-squares line, weights are increased by a factor
//! `q` until the fit lies in the multiscale confidence region. The local
//! branch only raises weights of points inside violating intervals; the
//! global branch raises all of them together. [`fit`] runs both and keeps
//! the smoother result.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::multiscale::{
    dyadic_family, in_region, sigma_hat, IntervalFamily, Membership, RegionSpec, DEFAULT_TAU,
};
use crate::spline::{least_squares_line, solve_weighted, Sample, SplineFit, WeightVector};

/// Maximum number of halvings when searching for the initial weight.
pub const MAX_INIT_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum SigmaMode {
    Estimated,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub q: f64,
    pub tau: f64,
    pub alpha: f64,
    pub max_iterations: usize,
    pub init_tolerance: f64,
    pub sigma_mode: SigmaMode,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            q: 2.0,
            tau: DEFAULT_TAU,
            alpha: 0.95,
            max_iterations: 200,
            init_tolerance: 1e-3,
            sigma_mode: SigmaMode::Estimated,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 1.0 && self.q.is_finite()) {
            return invalid(format!("q must exceed 1, got {}", self.q));
        }
        if self.max_iterations < 1 {
            return invalid("max_iterations must be >= 1");
        }
        if !(self.init_tolerance > 0.0) {
            return invalid("init_tolerance must be positive");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return invalid(format!("tau must be positive, got {}", self.tau));
        }
        if let SigmaMode::Fixed(s) = self.sigma_mode {
            if !(s >= 0.0 && s.is_finite()) {
                return invalid(format!("fixed sigma must be finite and >= 0, got {s}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Local,
    Global,
}

/// State after one fit of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub max_abs_w: f64,
    pub violations: usize,
    pub min_lambda: f64,
    pub max_lambda: f64,
    pub roughness: f64,
}

/// Result of the adaptive procedure together with its audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub final_fit: SplineFit,
    /// `None` when the least-squares line was accepted without any spline fit.
    pub final_weights: Option<WeightVector>,
    pub initial_lambda: Option<f64>,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub sigma_used: f64,
    pub tau_used: f64,
    pub threshold_used: f64,
    pub chosen_branch: Branch,
    pub roughness_local: Option<f64>,
    pub roughness_global: Option<f64>,
    pub truncated: bool,
    pub pass: bool,
}

impl FitReport {
    pub fn roughness(&self) -> f64 {
        self.final_fit.roughness
    }
}

/// What an observer sees after each fit of a branch.
pub struct Step<'a> {
    pub iteration: usize,
    pub weights: &'a WeightVector,
    pub fit: &'a SplineFit,
    pub membership: &'a Membership,
}

/// Region context shared by both branches.
#[derive(Debug, Clone)]
pub struct Region {
    pub family: IntervalFamily,
    pub spec: RegionSpec,
}

impl Region {
    pub fn for_sample(sample: &Sample, config: &AdaptConfig) -> Result<Self> {
        config.validate()?;
        let sigma = match config.sigma_mode {
            SigmaMode::Estimated => sigma_hat(sample.y())?,
            SigmaMode::Fixed(s) => s,
        };
        Ok(Self {
            family: dyadic_family(sample.len())?,
            spec: RegionSpec::new(sigma, config.tau, sample.len())?,
        })
    }

    pub fn test(&self, y: &[f64], fit: &[f64]) -> Result<Membership> {
        in_region(y, fit, &self.family, &self.spec)
    }
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Largest `λ = 2^{-k}`, `k = 0..=60`, whose constant-weight fit is within
/// `tol · spread` of the least-squares line in sup norm, where `spread` is
/// the range of the least-squares residuals.
pub fn initial_lambda(sample: &Sample, line: &SplineFit, tol: f64) -> Result<f64> {
    let residuals: Vec<f64> = sample
        .y()
        .iter()
        .zip(&line.values)
        .map(|(y, l)| y - l)
        .collect();
    let spread = residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - residuals.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lambda = 1.0;
    for _ in 0..MAX_INIT_HALVINGS {
        let fit = solve_weighted(sample, &WeightVector::constant(sample.len(), lambda)?)?;
        if sup_dist(&fit.values, &line.values) <= tol * spread {
            break;
        }
        lambda *= 0.5;
    }
    Ok(lambda)
}

fn points_in_violations(n: usize, membership: &Membership) -> Vec<bool> {
    let mut mask = vec![false; n];
    for v in &membership.violations {
        mask[v.interval.range()].iter_mut().for_each(|m| *m = true);
    }
    mask
}

/// Runs one branch of the procedure, calling `observe` after every fit.
pub fn run_branch(
    sample: &Sample,
    config: &AdaptConfig,
    region: &Region,
    branch: Branch,
    mut observe: impl FnMut(&Step<'_>),
) -> Result<FitReport> {
    config.validate()?;
    let n = sample.len();
    let y = sample.y();
    let (a, b) = least_squares_line(sample);
    let line = SplineFit::affine(sample.t(), a, b);
    let base = |fit: SplineFit, weights, lambda1, iterations, trace, truncated, pass| {
        let r = fit.roughness;
        FitReport {
            final_fit: fit,
            final_weights: weights,
            initial_lambda: lambda1,
            iterations,
            trace,
            sigma_used: region.spec.sigma,
            tau_used: region.spec.tau,
            threshold_used: region.spec.threshold(),
            chosen_branch: branch,
            roughness_local: (branch == Branch::Local).then_some(r),
            roughness_global: (branch == Branch::Global).then_some(r),
            truncated,
            pass,
        }
    };

    let m0 = region.test(y, &line.values)?;
    if m0.pass {
        return Ok(base(line, None, None, 0, Vec::new(), false, true));
    }

    let lambda1 = initial_lambda(sample, &line, config.init_tolerance)?;
    let mut weights = WeightVector::constant(n, lambda1)?;
    let mut trace = Vec::new();
    let mut iteration = 0;
    loop {
        iteration += 1;
        let fit = solve_weighted(sample, &weights)?;
        let membership = region.test(y, &fit.values)?;
        trace.push(TraceEntry {
            iteration,
            max_abs_w: membership.max_abs_w,
            violations: membership.violations.len(),
            min_lambda: weights.min(),
            max_lambda: weights.max(),
            roughness: fit.roughness,
        });
        observe(&Step {
            iteration,
            weights: &weights,
            fit: &fit,
            membership: &membership,
        });
        if membership.pass || iteration >= config.max_iterations {
            let pass = membership.pass;
            return Ok(base(
                fit,
                Some(weights),
                Some(lambda1),
                iteration,
                trace,
                !pass,
                pass,
            ));
        }
        match branch {
            Branch::Local => {
                let mask = points_in_violations(n, &membership);
                weights.scale_where(&mask, config.q);
            }
            Branch::Global => weights.scale_all(config.q),
        }
    }
}

/// Local branch: only points inside violating intervals get heavier weights.
pub fn fit_local(sample: &Sample, config: &AdaptConfig) -> Result<FitReport> {
    let region = Region::for_sample(sample, config)?;
    run_branch(sample, config, &region, Branch::Local, |_| {})
}

/// Global branch: a single common weight, i.e. a scan over ordinary
/// smoothing splines from smooth to rough.
pub fn fit_global(sample: &Sample, config: &AdaptConfig) -> Result<FitReport> {
    let region = Region::for_sample(sample, config)?;
    run_branch(sample, config, &region, Branch::Global, |_| {})
}

/// Runs both branches and returns the smoother final fit (ties go to the
/// local branch).
pub fn fit(sample: &Sample, config: &AdaptConfig) -> Result<FitReport> {
    fit_with(sample, config, Execution::default())
}

pub fn fit_with(sample: &Sample, config: &AdaptConfig, exec: Execution) -> Result<FitReport> {
    let region = Region::for_sample(sample, config)?;
    let (local, global) = exec.join(
        || run_branch(sample, config, &region, Branch::Local, |_| {}),
        || run_branch(sample, config, &region, Branch::Global, |_| {}),
    );
    let (local, global) = (local?, global?);
    let rl = local.roughness();
    let rg = global.roughness();
    let truncated = local.truncated || global.truncated;
    let mut chosen = if rg < rl { global } else { local };
    chosen.roughness_local = Some(rl);
    chosen.roughness_global = Some(rg);
    chosen.truncated = truncated;
    Ok(chosen)
}
