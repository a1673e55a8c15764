//! CSV input and the plain-text outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct XyTable {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub header: bool,
}

/// Reads a two-column numeric CSV. A first row that does not parse as
/// numbers is treated as a header; any later bad row is an error that
/// names its line.
pub fn read_xy(path: &Path) -> Result<XyTable> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut table = XyTable {
        t: Vec::new(),
        y: Vec::new(),
        header: false,
    };
    for (k, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Vec<Option<f64>> = record.iter().map(|f| f.parse::<f64>().ok()).collect();
        if k == 0 && parsed.iter().any(Option::is_none) {
            table.header = true;
            if record.len() != 2 {
                bail!(
                    "{}:{line}: header has {} columns, expected 2",
                    path.display(),
                    record.len()
                );
            }
            continue;
        }
        if record.len() != 2 {
            bail!(
                "{}:{line}: expected 2 columns, found {}",
                path.display(),
                record.len()
            );
        }
        match (parsed[0], parsed[1]) {
            (Some(t), Some(y)) if t.is_finite() && y.is_finite() => {
                table.t.push(t);
                table.y.push(y);
            }
            _ => bail!(
                "{}:{line}: cannot read {:?} as two finite numbers",
                path.display(),
                record.iter().collect::<Vec<_>>().join(",")
            ),
        }
    }
    if table.t.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(table)
}

/// Affine map of the abscissae, `t_fit = (t_raw - offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub offset: f64,
    pub scale: f64,
}

impl Rescale {
    pub fn to_unit(t: &[f64]) -> Result<Self> {
        let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            bail!("cannot rescale: all abscissae equal {lo}");
        }
        Ok(Self {
            offset: lo,
            scale: hi - lo,
        })
    }

    pub fn apply(&self, t: &[f64]) -> Vec<f64> {
        t.iter()
            .map(|v| ((v - self.offset) / self.scale).clamp(0.0, 1.0))
            .collect()
    }
}

/// Writes a CSV whose cells are already formatted.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// gnuplot-friendly table: `#`-prefixed header, space-separated columns.
pub fn write_plot_data(
    path: &Path,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# {}", header.join(" "))?;
    for row in rows {
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}
