//! Test signals, noise models, integrated error metrics and the Monte Carlo
//! study harness.

use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adapt::{fit_global, fit_with, AdaptConfig};
use crate::error::{invalid, Result};
use crate::exec::{stream_rng, Execution};
use crate::multiscale::median;
use crate::spline::{Order, Sample, SplineFit};

/// Standard deviations of the signal used to define the noise presets.
pub const RUPCAR_SCALE: f64 = 0.288;
pub const BUMPS_SCALE: f64 = 2.2;

/// Cells of the midpoint rule used by [`rise`].
pub const RISE_CELLS: usize = 4096;

const BUMPS_CSV: &str = include_str!("../data/bumps.csv");

/// One bump of the Donoho–Johnstone signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub location: f64,
    pub height: f64,
    pub width: f64,
}

/// The canonical bump table shipped in `data/bumps.csv`.
pub fn bump_table() -> &'static [Bump] {
    static TABLE: OnceLock<Vec<Bump>> = OnceLock::new();
    TABLE.get_or_init(|| {
        BUMPS_CSV
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("location") && !l.trim().is_empty())
            .map(|l| {
                let f: Vec<f64> = l.split(',').map(|v| v.trim().parse().unwrap()).collect();
                Bump {
                    location: f[0],
                    height: f[1],
                    width: f[2],
                }
            })
            .collect()
    })
}

#[cfg(test)]
pub(crate) fn bumps_source() -> &'static str {
    BUMPS_CSV
}

fn rupcar_shift(j: i32) -> f64 {
    2f64.powf((9.0 - 4.0 * j as f64) / 5.0)
}

/// Ruppert–Carroll test function
/// `√(x(1-x)) · sin(2π(1 + e) / (x + e))`, `e = 2^{(9-4j)/5}`.
pub fn rupcar(x: f64, j: i32) -> f64 {
    let e = rupcar_shift(j);
    (x * (1.0 - x)).sqrt() * (2.0 * std::f64::consts::PI * (1.0 + e) / (x + e)).sin()
}

fn rupcar_derivs(x: f64, j: i32) -> [f64; 3] {
    use std::f64::consts::PI;
    let e = rupcar_shift(j);
    let u = x * (1.0 - x);
    let s = u.sqrt();
    let s1 = (1.0 - 2.0 * x) / (2.0 * s);
    // s'' = -(1/s) - (1-2x)²/(4 s³)
    let s2 = -1.0 / s - (1.0 - 2.0 * x).powi(2) / (4.0 * s * u);
    let c = 2.0 * PI * (1.0 + e);
    let phi = c / (x + e);
    let p1 = -c / (x + e).powi(2);
    let p2 = 2.0 * c / (x + e).powi(3);
    let (sn, cs) = phi.sin_cos();
    [
        s * sn,
        s1 * sn + s * cs * p1,
        s2 * sn + 2.0 * s1 * cs * p1 + s * (cs * p2 - sn * p1 * p1),
    ]
}

/// Donoho–Johnstone bumps signal.
pub fn bumps(x: f64) -> f64 {
    bumps_derivs(x)[0]
}

fn bumps_derivs(x: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for b in bump_table() {
        let d = (x - b.location) / b.width;
        let a = 1.0 + d.abs();
        let sign = d.signum() * if d == 0.0 { 0.0 } else { 1.0 };
        out[0] += b.height * a.powi(-4);
        out[1] += b.height * -4.0 * sign * a.powi(-5) / b.width;
        out[2] += b.height * 20.0 * a.powi(-6) / (b.width * b.width);
    }
    out
}

/// A regression function with its first two derivatives.
#[derive(Clone)]
pub enum TestFunction {
    RupCar(i32),
    Bumps,
    /// `sin(2π x)`.
    Sine,
    /// User-supplied function; derivatives by central differences.
    Custom {
        name: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl TestFunction {
    pub fn name(&self) -> String {
        match self {
            TestFunction::RupCar(j) => format!("rupcar{j}"),
            TestFunction::Bumps => "bumps".into(),
            TestFunction::Sine => "sine".into(),
            TestFunction::Custom { name, .. } => name.clone(),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.derivative(x, Order::Value)
    }

    pub fn derivative(&self, x: f64, order: Order) -> f64 {
        use std::f64::consts::TAU;
        let k = order.as_index();
        match self {
            TestFunction::RupCar(j) if k == 0 => rupcar(x, *j),
            TestFunction::RupCar(j) => rupcar_derivs(x, *j)[k],
            TestFunction::Bumps => bumps_derivs(x)[k],
            TestFunction::Sine => match order {
                Order::Value => (TAU * x).sin(),
                Order::First => TAU * (TAU * x).cos(),
                Order::Second => -TAU * TAU * (TAU * x).sin(),
            },
            TestFunction::Custom { f, .. } => match order {
                Order::Value => f(x),
                Order::First => {
                    let h = 1e-6;
                    (f(x + h) - f(x - h)) / (2.0 * h)
                }
                Order::Second => {
                    let h = 1e-4;
                    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
                }
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    Gaussian,
    Cauchy,
}

/// `y_i = f(t_i) + σ ε_i` on `t_i = i/n`, drawing from `rng`.
pub fn make_dataset_with_rng(
    f: &TestFunction,
    n: usize,
    sigma: f64,
    noise: Noise,
    rng: &mut impl Rng,
) -> Result<Sample> {
    if n < 3 {
        return invalid(format!("dataset needs n >= 3, got {n}"));
    }
    let cauchy = Cauchy::new(0.0, 1.0).expect("unit Cauchy");
    let y = (1..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let e: f64 = match noise {
                Noise::Gaussian => StandardNormal.sample(rng),
                Noise::Cauchy => cauchy.sample(rng),
            };
            f.value(t) + sigma * e
        })
        .collect();
    Sample::equispaced(y)
}

/// Seeded form of [`make_dataset_with_rng`].
pub fn make_dataset(
    f: &TestFunction,
    n: usize,
    sigma: f64,
    noise: Noise,
    seed: u64,
) -> Result<Sample> {
    make_dataset_with_rng(f, n, sigma, noise, &mut stream_rng(seed, n as u64))
}

/// Root integrated squared error between `f^{(order)}` and `fit^{(order)}`
/// over `[0, 1]`, by the midpoint rule on [`RISE_CELLS`] cells.
pub fn rise(truth: &TestFunction, fit: &SplineFit, order: Order) -> f64 {
    rise_with(|x| truth.derivative(x, order), fit, order, RISE_CELLS)
}

/// RISE against an arbitrary truth, with an explicit cell count.
pub fn rise_with(truth: impl Fn(f64) -> f64, fit: &SplineFit, order: Order, cells: usize) -> f64 {
    let h = 1.0 / cells as f64;
    let sum: f64 = (0..cells)
        .map(|k| {
            let x = (k as f64 + 0.5) * h;
            let d = truth(x) - fit.eval_unchecked(x, order);
            d * d
        })
        .sum();
    (sum * h).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Both branches, smoother result kept.
    Wss,
    /// Common weight only.
    GlobalOnly,
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub function: TestFunction,
    pub n_grid: Vec<usize>,
    pub sigma: f64,
    pub replicates: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub adapt: AdaptConfig,
}

/// Named signal/noise settings of the simulation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    RupcarHi,
    RupcarLo,
    BumpsHi,
    BumpsLo,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::RupcarHi,
        Preset::RupcarLo,
        Preset::BumpsHi,
        Preset::BumpsLo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::RupcarHi => "rupcar-hi",
            Preset::RupcarLo => "rupcar-lo",
            Preset::BumpsHi => "bumps-hi",
            Preset::BumpsLo => "bumps-lo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn function(self) -> TestFunction {
        match self {
            Preset::RupcarHi | Preset::RupcarLo => TestFunction::RupCar(6),
            Preset::BumpsHi | Preset::BumpsLo => TestFunction::Bumps,
        }
    }

    /// Noise SD at signal-to-noise ratio 7 (`hi`) or 3 (`lo`).
    pub fn sigma(self) -> f64 {
        match self {
            Preset::RupcarHi => RUPCAR_SCALE / 7.0,
            Preset::RupcarLo => RUPCAR_SCALE / 3.0,
            Preset::BumpsHi => BUMPS_SCALE / 7.0,
            Preset::BumpsLo => BUMPS_SCALE / 3.0,
        }
    }
}

impl StudyConfig {
    pub fn from_preset(preset: Preset, replicates: usize, seed: u64) -> Self {
        Self {
            function: preset.function(),
            n_grid: vec![400, 800, 1600, 3200],
            sigma: preset.sigma(),
            replicates,
            seed,
            estimator: Estimator::Wss,
            adapt: AdaptConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 1 {
            return invalid("replicates must be >= 1");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return invalid(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if self.n_grid.is_empty() || self.n_grid.iter().any(|&n| n < 3) {
            return invalid("sample sizes must all be >= 3");
        }
        self.adapt.validate()
    }
}

/// One cell of the study table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub function: String,
    pub n: usize,
    pub sigma: f64,
    pub order: usize,
    pub mrise: f64,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
    /// Replicates whose fit hit the iteration cap.
    pub truncated: usize,
}

pub const STUDY_CSV_HEADER: &str = "function,n,sigma,order,mrise,replicates,seed";

impl StudyTable {
    pub fn mrise(&self, n: usize, order: Order) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.order == order.as_index())
            .map(|r| r.mrise)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(STUDY_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.function, r.n, r.sigma, r.order, r.mrise, r.replicates, r.seed
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study table serializes")
    }
}

/// RISE values (orders 0, 1, 2) of every replicate at sample size `n`.
pub fn replicate_rise(
    config: &StudyConfig,
    n: usize,
    exec: Execution,
) -> Result<Vec<([f64; 3], bool)>> {
    config.validate()?;
    let results = exec.map_indexed(config.replicates, |r| -> Result<([f64; 3], bool)> {
        let key = ((n as u64) << 32) | r as u64;
        let mut rng = stream_rng(config.seed, key);
        let sample =
            make_dataset_with_rng(&config.function, n, config.sigma, Noise::Gaussian, &mut rng)?;
        let report = match config.estimator {
            Estimator::Wss => fit_with(&sample, &config.adapt, Execution::Sequential)?,
            Estimator::GlobalOnly => fit_global(&sample, &config.adapt)?,
        };
        let errs = Order::ALL.map(|o| rise(&config.function, &report.final_fit, o));
        Ok((errs, report.truncated))
    });
    results.into_iter().collect()
}

/// Median RISE over replicates for each sample size and derivative order.
pub fn mrise_study(config: &StudyConfig) -> Result<StudyTable> {
    mrise_study_with(config, Execution::default())
}

pub fn mrise_study_with(config: &StudyConfig, exec: Execution) -> Result<StudyTable> {
    config.validate()?;
    let mut rows = Vec::new();
    let mut truncated = 0;
    for &n in &config.n_grid {
        let reps = replicate_rise(config, n, exec)?;
        truncated += reps.iter().filter(|r| r.1).count();
        for order in Order::ALL {
            let mut vals: Vec<f64> = reps.iter().map(|r| r.0[order.as_index()]).collect();
            rows.push(StudyRow {
                function: config.function.name(),
                n,
                sigma: config.sigma,
                order: order.as_index(),
                mrise: median(&mut vals),
                replicates: config.replicates,
                seed: config.seed,
            });
        }
    }
    Ok(StudyTable { rows, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rupcar_vanishes_at_the_ends_and_respects_envelope() {
        assert_eq!(rupcar(0.0, 6), 0.0);
        assert_eq!(rupcar(1.0, 6), 0.0);
        for k in 0..=1000 {
            let x = k as f64 / 1000.0;
            assert!(rupcar(x, 6).abs() <= (x * (1.0 - x)).sqrt() + 1e-15);
        }
    }

    #[test]
    fn rupcar_derivatives_match_finite_differences() {
        for &x in &[0.1, 0.2, 0.37, 0.5, 0.81] {
            let h = 1e-5;
            let fd1 = (rupcar(x + h, 6) - rupcar(x - h, 6)) / (2.0 * h);
            let d = rupcar_derivs(x, 6);
            let fd2 = (rupcar_derivs(x + h, 6)[1] - rupcar_derivs(x - h, 6)[1]) / (2.0 * h);
            assert!((d[1] - fd1).abs() < 1e-5 * (1.0 + fd1.abs()), "x={x}");
            assert!(
                (d[2] - fd2).abs() < 1e-3 * (1.0 + fd2.abs()),
                "x={x} {} {}",
                d[2],
                fd2
            );
        }
    }

    #[test]
    fn bumps_shape() {
        assert!(bumps(0.95) < 0.2);
        let table = bump_table();
        assert_eq!(table.len(), 11);
        let (best_x, _) = (0..=10_000)
            .map(|k| k as f64 / 10_000.0)
            .map(|x| (x, bumps(x)))
            .fold((0.0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        assert!(bumps(best_x) > 0.0);
        assert!(
            table.iter().any(|b| (b.location - best_x).abs() < 1e-3),
            "max at {best_x}"
        );
        for k in 0..=1000 {
            assert!(bumps(k as f64 / 1000.0) >= 0.0);
        }
    }

    #[test]
    fn bumps_derivatives_away_from_peaks() {
        for &x in &[0.05, 0.2, 0.33, 0.5, 0.9] {
            let h = 1e-6;
            let fd = (bumps(x + h) - bumps(x - h)) / (2.0 * h);
            let d = bumps_derivs(x)[1];
            assert!(
                (d - fd).abs() < 1e-4 * (1.0 + d.abs()),
                "x={x}: {d} vs {fd}"
            );
        }
    }

    #[test]
    fn dataset_without_noise_is_the_signal() {
        let f = TestFunction::RupCar(6);
        let s = make_dataset(&f, 50, 0.0, Noise::Gaussian, 3).unwrap();
        for (t, y) in s.t().iter().zip(s.y()) {
            assert_eq!(*y, rupcar(*t, 6));
        }
        let a = make_dataset(&f, 50, 0.1, Noise::Cauchy, 3).unwrap();
        let b = make_dataset(&f, 50, 0.1, Noise::Cauchy, 3).unwrap();
        assert_eq!(a, b);
        assert!(make_dataset(&f, 2, 0.1, Noise::Gaussian, 3).is_err());
    }

    #[test]
    fn presets() {
        assert_eq!(Preset::parse("bumps-hi"), Some(Preset::BumpsHi));
        assert!((Preset::RupcarHi.sigma() - 0.0411).abs() < 1e-4);
        assert!((Preset::BumpsLo.sigma() - 0.733).abs() < 1e-3);
        assert!(Preset::parse("nope").is_none());
    }

    #[test]
    fn study_validation() {
        let mut c = StudyConfig::from_preset(Preset::RupcarHi, 0, 1);
        assert!(c.validate().is_err());
        c.replicates = 1;
        c.n_grid = vec![2];
        assert!(c.validate().is_err());
    }
}
