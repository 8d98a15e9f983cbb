//! CSV experiment reports.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub const CSV_HEADER: &str =
    "experiment,estimate,reference,abs_error,rel_error,mc_stderr,n,n_paths,dt,epsilon,seed,wall_time";

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub experiment: String,
    pub estimate: f64,
    pub reference: f64,
    pub mc_stderr: f64,
    pub n: u32,
    pub n_paths: u64,
    pub dt: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub wall_time: f64,
    /// Row-level check outcome; drives the process exit status, not the CSV.
    pub pass: bool,
}

impl ReportRow {
    pub fn abs_error(&self) -> f64 {
        (self.estimate - self.reference).abs()
    }

    pub fn rel_error(&self) -> f64 {
        self.abs_error() / self.reference.abs().max(1e-12)
    }

    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            sig9(self.estimate),
            sig9(self.reference),
            sig9(self.abs_error()),
            sig9(self.rel_error()),
            sig9(self.mc_stderr),
            self.n,
            self.n_paths,
            sig9(self.dt),
            sig9(self.epsilon),
            self.seed,
            sig9(self.wall_time),
        )
    }
}

/// Nine significant digits.
fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn render_report(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

pub fn emit_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(render_report(rows).as_bytes())?;
    Ok(())
}
