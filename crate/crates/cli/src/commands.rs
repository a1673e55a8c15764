use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use wss_core::multiscale::{calibrate_tau, Calibration, DEFAULT_TAU};
use wss_core::simulation::{mrise_study, StudyConfig};
use wss_core::variants::robust_fit;
use wss_core::{
    build_penalty, dyadic_family, fit, scale_fit, AdaptConfig, FitReport, Order, Sample,
    ScaleRegionSpec, SigmaMode, SplineFit,
};

use crate::cli::{
    CalibrateArgs, Command, FitArgs, InputArgs, ScaleArgs, SimulateArgs, SpectrumArgs,
};
use crate::table::{read_xy, write_csv, write_json, write_plot_data, Rescale};

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Iteration cap hit or no information in the data; exit code 3.
    Incomplete,
}

pub fn run(command: Command) -> Result<Status> {
    match command {
        Command::Fit(args) => cmd_fit(args),
        Command::Robust(args) => cmd_fit(FitArgs {
            robust: true,
            ..args
        }),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Scale(args) => cmd_scale(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Spectrum(args) => cmd_spectrum(args),
    }
}

fn num(v: f64) -> String {
    // Debug for f64 is the shortest round-trip form, with an exponent for
    // very small or large magnitudes
    format!("{v:?}")
}

struct Loaded {
    raw_t: Vec<f64>,
    sample: Sample,
    rescale: Option<Rescale>,
    output: PathBuf,
    report: PathBuf,
}

fn load(io: &InputArgs, suffix: &str) -> Result<Loaded> {
    let table = read_xy(&io.input)?;
    let rescale = if io.rescale {
        Some(Rescale::to_unit(&table.t)?)
    } else {
        None
    };
    let t = match &rescale {
        Some(r) => r.apply(&table.t),
        None => table.t.clone(),
    };
    if rescale.is_none() && t.iter().any(|v| !(0.0..=1.0).contains(v)) {
        bail!(
            "{}: abscissae must lie in [0, 1]; pass --rescale to map them there",
            io.input.display()
        );
    }
    let sample = Sample::new(t, table.y).with_context(|| format!("{}", io.input.display()))?;
    let output = io
        .output
        .clone()
        .unwrap_or_else(|| default_output(&io.input, suffix));
    let report = io
        .report
        .clone()
        .unwrap_or_else(|| output.with_extension("json"));
    Ok(Loaded {
        raw_t: table.t,
        sample,
        rescale,
        output,
        report,
    })
}

fn default_output(input: &Path, suffix: &str) -> PathBuf {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    input.with_file_name(format!("{stem}.{suffix}.csv"))
}

#[derive(Serialize)]
struct CalibrationNote {
    alpha: f64,
    replicates: usize,
    seed: u64,
    tau: f64,
}

#[derive(Serialize)]
struct RobustNote {
    replaced: usize,
    mask: Vec<bool>,
}

#[derive(Serialize)]
struct FitDocument<'a> {
    input: String,
    n: usize,
    rescale: Option<Rescale>,
    calibration: Option<CalibrationNote>,
    robust: Option<RobustNote>,
    #[serde(flatten)]
    report: &'a FitReport,
}

fn cmd_fit(args: FitArgs) -> Result<Status> {
    let data = load(&args.io, if args.robust { "robust" } else { "fit" })?;
    let n = data.sample.len();
    let calibration = match args.alpha {
        Some(alpha) => {
            let cal = Calibration {
                alpha,
                replicates: args.replicates,
                seed: args.seed,
            };
            let tau = calibrate_tau(&dyadic_family(n)?, cal)?;
            Some(CalibrationNote {
                alpha,
                replicates: args.replicates,
                seed: args.seed,
                tau,
            })
        }
        None => None,
    };
    let config = AdaptConfig {
        q: args.q,
        tau: calibration
            .as_ref()
            .map(|c| c.tau)
            .or(args.tau)
            .unwrap_or(DEFAULT_TAU),
        alpha: args.alpha.unwrap_or(AdaptConfig::default().alpha),
        max_iterations: args.max_iter,
        sigma_mode: args.sigma.map_or(SigmaMode::Estimated, SigmaMode::Fixed),
        ..AdaptConfig::default()
    };
    let (report, robust) = if args.robust {
        let r = robust_fit(&data.sample, &config)?;
        let note = RobustNote {
            replaced: r.cleaned.replaced_count(),
            mask: r.cleaned.replaced,
        };
        (r.report, Some(note))
    } else {
        (fit(&data.sample, &config)?, None)
    };

    let g = &report.final_fit;
    let t = data.sample.t();
    let d1 = derivative(g, t, Order::First)?;
    let lambda: Vec<f64> = match &report.final_weights {
        Some(w) => w.as_slice().to_vec(),
        None => vec![0.0; n],
    };
    let mut header = vec!["t", "fit", "d1", "d2", "lambda"];
    if robust.is_some() {
        header.push("replaced");
    }
    let rows = (0..n).map(|i| {
        let mut row = vec![
            num(t[i]),
            num(g.values[i]),
            num(d1[i]),
            num(g.second_derivs[i]),
            num(lambda[i]),
        ];
        if let Some(r) = &robust {
            row.push(if r.mask[i] { "1" } else { "0" }.into());
        }
        row
    });
    write_csv(&data.output, &header, rows)?;

    if let Some(path) = &args.io.plot_data {
        let y = data.sample.y();
        let rows = (0..n).map(|i| {
            vec![
                num(data.raw_t[i]),
                num(t[i]),
                num(y[i]),
                num(g.values[i]),
                num(d1[i]),
                num(g.second_derivs[i]),
            ]
        });
        write_plot_data(path, &["t_raw", "t", "y", "fit", "d1", "d2"], rows)?;
    }

    let doc = FitDocument {
        input: args.io.input.display().to_string(),
        n,
        rescale: data.rescale,
        calibration,
        robust,
        report: &report,
    };
    write_json(&data.report, &doc)?;

    eprintln!(
        "n={n} sigma={} tau={} threshold={} iterations={} branch={:?} roughness={} pass={}",
        report.sigma_used,
        report.tau_used,
        report.threshold_used,
        report.iterations,
        report.chosen_branch,
        report.roughness(),
        report.pass
    );
    if report.truncated {
        eprintln!(
            "warning: iteration cap {} reached before the fit entered the region",
            args.max_iter
        );
        return Ok(Status::Incomplete);
    }
    Ok(Status::Ok)
}

fn derivative(g: &SplineFit, t: &[f64], order: Order) -> Result<Vec<f64>> {
    Ok(t.iter()
        .map(|&x| g.evaluate(x, order))
        .collect::<wss_core::Result<Vec<f64>>>()?)
}

#[derive(Serialize)]
struct CalibrateLine {
    n: usize,
    alpha: f64,
    replicates: usize,
    seed: u64,
    tau: f64,
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<Status> {
    let family = dyadic_family(args.n)?;
    let cal = Calibration {
        alpha: args.alpha,
        replicates: args.replicates,
        seed: args.seed,
    };
    let tau = calibrate_tau(&family, cal)?;
    let line = CalibrateLine {
        n: args.n,
        alpha: args.alpha,
        replicates: args.replicates,
        seed: args.seed,
        tau,
    };
    println!("{}", serde_json::to_string(&line)?);
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct ScaleDocument<'a> {
    input: String,
    n: usize,
    rescale: Option<Rescale>,
    alpha_n: f64,
    bias_correction: bool,
    #[serde(flatten)]
    fit: &'a wss_core::variants::ScaleFit,
}

fn cmd_scale(args: ScaleArgs) -> Result<Status> {
    let data = load(&args.io, "scale")?;
    let n = data.sample.len();
    let mut spec = match args.alpha {
        Some(a) => ScaleRegionSpec::new(a, dyadic_family(n)?)?,
        None => ScaleRegionSpec::default_for(n)?,
    };
    spec.bias_correction = !args.no_bias_correction;
    let config = AdaptConfig {
        q: args.q,
        max_iterations: args.max_iter,
        ..AdaptConfig::default()
    };
    let r = scale_fit(&data.sample, &spec, &config)?;

    let t = data.sample.t();
    let s = r.floored_values();
    let lambda: Vec<f64> = match &r.weights {
        Some(w) => w.as_slice().to_vec(),
        None => vec![0.0; n],
    };
    write_csv(
        &data.output,
        &["t", "s", "lambda"],
        (0..n).map(|i| vec![num(t[i]), num(s[i]), num(lambda[i])]),
    )?;
    if let Some(path) = &args.io.plot_data {
        let y = data.sample.y();
        let rows = (0..n).map(|i| vec![num(data.raw_t[i]), num(t[i]), num(y[i]), num(s[i])]);
        write_plot_data(path, &["t_raw", "t", "y", "s"], rows)?;
    }
    let doc = ScaleDocument {
        input: args.io.input.display().to_string(),
        n,
        rescale: data.rescale,
        alpha_n: spec.alpha_n,
        bias_correction: spec.bias_correction,
        fit: &r,
    };
    write_json(&data.report, &doc)?;

    eprintln!(
        "n={n} iterations={} pass={} floor={}",
        r.iterations, r.pass, r.floor
    );
    if r.degenerate {
        eprintln!("warning: all responses are zero; no scale information");
        return Ok(Status::Incomplete);
    }
    if r.truncated {
        eprintln!(
            "warning: iteration cap {} reached before the scale fit entered its region",
            args.max_iter
        );
        return Ok(Status::Incomplete);
    }
    Ok(Status::Ok)
}

fn cmd_simulate(args: SimulateArgs) -> Result<Status> {
    let mut config = StudyConfig::from_preset(args.preset, args.replicates, args.seed);
    if !args.n.is_empty() {
        config.n_grid = args.n.clone();
    }
    config.adapt.max_iterations = args.max_iter;
    let table = mrise_study(&config)?;
    let text = if args.json {
        table.to_json() + "\n"
    } else {
        table.to_csv()
    };
    match &args.output {
        Some(p) => {
            std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display()))?
        }
        None => print!("{text}"),
    }
    if table.truncated > 0 {
        eprintln!(
            "warning: {} replicate fits hit the iteration cap",
            table.truncated
        );
        return Ok(Status::Incomplete);
    }
    Ok(Status::Ok)
}

fn cmd_spectrum(args: SpectrumArgs) -> Result<Status> {
    let n = args.n;
    let sample = Sample::equispaced(vec![0.0; n])?;
    let ev = build_penalty(&sample).eigenvalues()?;
    let mut text = String::from("index,eigenvalue,scaled\n");
    for (i, v) in ev.iter().enumerate() {
        let k = (i + 1) as f64;
        // γ_i n / i^4, roughly constant over the tail
        text.push_str(&format!(
            "{},{},{}\n",
            i + 1,
            num(*v),
            num(v * n as f64 / k.powi(4))
        ));
    }
    match &args.output {
        Some(p) => {
            std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display()))?
        }
        None => print!("{text}"),
    }
    Ok(Status::Ok)
}
