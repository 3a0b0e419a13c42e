//! CSV emission. Floats carry 17 significant digits; the fitted slope is
//! appended as a `#` comment line after the records.

use std::io::Write;
use std::path::Path;

use crate::experiment::{GapRecord, RunRecord, Sweep};
use crate::fit::SlopeFit;
use crate::HarnessError;

pub const RUN_HEADER: [&str; 6] = ["n", "eval_total", "err_mean", "err_stderr", "phi_theory", "seed"];

pub const GAP_HEADER: [&str; 11] = [
    "n",
    "level",
    "eval_a4",
    "eval_a5",
    "err_a4",
    "err_a5",
    "stderr_a4",
    "stderr_a5",
    "ratio",
    "budget_scale",
    "seed",
];

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn slope_line(what: &str, slope: &Option<SlopeFit>) -> String {
    match slope {
        Some(s) => format!(
            "# fitted slope of log2 {what} vs log2 n (rows with n >= median): {} 95% [{}, {}] points {}\n",
            float(s.slope),
            float(s.lower()),
            float(s.upper()),
            s.points
        ),
        None => format!("# fitted slope of log2 {what} vs log2 n: undefined\n"),
    }
}

fn finish(mut w: csv::Writer<Vec<u8>>, trailer: String) -> Result<String, HarnessError> {
    w.flush()?;
    let mut bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    bytes.extend_from_slice(trailer.as_bytes());
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_error(e: csv::Error) -> HarnessError {
    HarnessError::Io(std::io::Error::other(e))
}

pub fn convergence_csv(sweep: &Sweep<RunRecord>) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RUN_HEADER).map_err(csv_error)?;
    for r in &sweep.rows {
        w.write_record([
            r.n.to_string(),
            r.eval_total.to_string(),
            float(r.err_mean),
            float(r.err_stderr),
            float(r.phi_theory),
            r.seed.to_string(),
        ])
        .map_err(csv_error)?;
    }
    finish(w, slope_line("err_mean", &sweep.slope))
}

pub fn gap_csv(sweep: &Sweep<GapRecord>) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(GAP_HEADER).map_err(csv_error)?;
    for r in &sweep.rows {
        w.write_record([
            r.n.to_string(),
            r.level.to_string(),
            r.eval_a4.to_string(),
            r.eval_a5.to_string(),
            float(r.err_a4),
            float(r.err_a5),
            float(r.stderr_a4),
            float(r.stderr_a5),
            float(r.ratio),
            float(r.budget_scale),
            r.seed.to_string(),
        ])
        .map_err(csv_error)?;
    }
    finish(w, slope_line("ratio", &sweep.slope))
}

/// Writes `text` to `path`, or to stdout when no path is given.
pub fn emit(text: &str, path: Option<&Path>) -> Result<(), HarnessError> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}
