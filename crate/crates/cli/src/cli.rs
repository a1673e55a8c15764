use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use wss_core::simulation::Preset;

/// Locally adaptive weighted smoothing splines.
///
/// Exit codes: 0 success, 2 input error, 3 truncated or degenerate result.
#[derive(Debug, Parser)]
#[command(name = "wss", version, about, long_about = None)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a (t, y) CSV with the adaptive weighted spline.
    Fit(FitArgs),
    /// Clean outliers with the running-median rule, then fit.
    Robust(FitArgs),
    /// Calibrate τ for the dyadic scheme by white-noise simulation.
    Calibrate(CalibrateArgs),
    /// Fit a smooth scale function to heteroscedastic, mean-zero data.
    Scale(ScaleArgs),
    /// Run a seeded MRISE study for one of the preset settings.
    Simulate(SimulateArgs),
    /// Eigenvalues of the penalty matrix for an equispaced design.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Two-column CSV (t, y); a non-numeric first row is taken as a header.
    pub input: PathBuf,
    /// Output CSV. Defaults to `<input stem>.<command>.csv` beside the input.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// JSON report. Defaults to the output path with a `.json` extension.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Map [min t, max t] affinely onto [0, 1] before fitting.
    #[arg(long)]
    pub rescale: bool,
    /// Also write a whitespace-separated table for gnuplot.
    #[arg(long, value_name = "PATH")]
    pub plot_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub io: InputArgs,
    /// Weight multiplier per violating interval.
    #[arg(long, default_value_t = 2.0)]
    pub q: f64,
    /// Region constant; threshold is σ √(τ ln n). Defaults to 3.
    #[arg(long, conflicts_with = "alpha")]
    pub tau: Option<f64>,
    /// Calibrate τ for this coverage instead of using a fixed value.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Replicates for the `--alpha` calibration.
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
    /// Seed for the `--alpha` calibration.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Use this noise level instead of the difference-based estimate.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Clean outliers before fitting (same as the `robust` command).
    #[arg(long)]
    pub robust: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(short, long)]
    pub n: usize,
    #[arg(long, default_value_t = 0.95)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    #[command(flatten)]
    pub io: InputArgs,
    /// Per-interval coverage of the χ² bands. Defaults to 1 - n^-1.5.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub q: f64,
    #[arg(long, default_value_t = wss_core::variants::SCALE_MAX_ITERATIONS)]
    pub max_iter: usize,
    /// Fit |y| itself rather than |y|·√(π/2).
    #[arg(long)]
    pub no_bias_correction: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// rupcar-hi, rupcar-lo, bumps-hi or bumps-lo.
    #[arg(long, value_parser = parse_preset)]
    pub preset: Preset,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Sample sizes, comma-separated. Defaults to 400,800,1600,3200.
    #[arg(short, long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Table destination; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Write JSON instead of CSV.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(short, long)]
    pub n: usize,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    Preset::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
        format!("unknown preset {s:?}; expected one of {}", names.join(", "))
    })
}
