//! Report assembly: CSV tables, SVG plots, and the manifest that pins the
//! exact configuration and analytic constants behind a run.

use crate::Result;
use std::fmt::Write as _;
use std::path::Path;

/// FNV-1a 64-bit hash of the raw config bytes; identifies a run.
pub fn config_hash(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// CSV table with a fixed header; floats are written with 17 significant
/// digits so identical runs produce identical bytes.
pub struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.header.len(), "row width mismatch");
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn cell_f(x: f64) -> String {
    mflab::fmt_f64(x)
}

pub fn cell_i(x: usize) -> String {
    x.to_string()
}

pub fn cell_s(x: impl Into<String>) -> String {
    x.into()
}

/// Everything a finished experiment hands back to `main`.
pub struct Report {
    /// Primary artifact.
    pub csv: String,
    /// Convenience plot.
    pub svg: String,
    /// Human-readable verdict lines, echoed to stdout and the manifest.
    pub summary: Vec<String>,
    /// Assertion-style outcome; `false` maps to exit code 2.
    pub ok: bool,
    /// Extra files: (name, contents).
    pub extra_files: Vec<(String, String)>,
}

pub struct ManifestInfo<'a> {
    pub command: &'a str,
    pub config_path: &'a str,
    pub config_raw: &'a str,
    pub seed: u64,
    pub jobs: Option<usize>,
    /// (name, value) pairs of the analytic constants the run used.
    pub constants: Vec<(String, f64)>,
    pub notes: Vec<String>,
}

pub fn write_outputs(out_dir: &Path, report: &Report, info: &ManifestInfo<'_>) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.csv"), &report.csv)?;
    std::fs::write(out_dir.join("report.svg"), &report.svg)?;
    for (name, contents) in &report.extra_files {
        std::fs::write(out_dir.join(name), contents)?;
    }
    let mut m = String::new();
    let _ = writeln!(m, "command: {}", info.command);
    let _ = writeln!(m, "config: {}", info.config_path);
    let _ = writeln!(m, "config_hash: {:016x}", config_hash(info.config_raw.as_bytes()));
    let _ = writeln!(m, "seed: {}", info.seed);
    if let Some(jobs) = info.jobs {
        let _ = writeln!(m, "jobs: {jobs}");
    }
    let _ = writeln!(m, "status: {}", if report.ok { "pass" } else { "FAIL" });
    if !info.constants.is_empty() {
        let _ = writeln!(m, "constants:");
        for (name, value) in &info.constants {
            let _ = writeln!(m, "  {name} = {}", mflab::fmt_f64(*value));
        }
    }
    for note in &info.notes {
        let _ = writeln!(m, "note: {note}");
    }
    for line in &report.summary {
        let _ = writeln!(m, "result: {line}");
    }
    let _ = writeln!(m, "--- config echo ---");
    m.push_str(info.config_raw);
    std::fs::write(out_dir.join("manifest.txt"), m)?;
    Ok(())
}

/// Mean and standard error of a sample.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in points {
        let lx = x.ln();
        let ly = y.max(1e-300).ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
