//! Result files: per-round CSV/JSON rows, summary tables and the run manifest.
//!
//! CSV output uses a header row, comma separators, RFC 4180 quoting and `.` as
//! the decimal separator. Floats are written in shortest round-trip form, so
//! identical runs produce identical bytes. Missing optional metrics are empty
//! cells.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

use super::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: String,
    pub seed: u64,
    pub round: usize,
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub consensus_error: f64,
    pub approx_error: Option<f64>,
    pub accuracy: Option<f64>,
    pub active_count: usize,
    /// Seconds since the start of the run; only written when timing is on.
    pub wallclock: Option<f64>,
}

impl ResultRow {
    pub fn is_finite(&self) -> bool {
        [self.loss, self.grad_norm_sq, self.consensus_error]
            .into_iter()
            .chain(self.approx_error)
            .chain(self.accuracy)
            .chain(self.wallclock)
            .all(f64::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Checks the row invariants: finite metrics and strictly increasing rounds
/// within each `(algorithm, seed)` block.
pub fn check_rows(rows: &[ResultRow]) -> Result<()> {
    for (k, r) in rows.iter().enumerate() {
        if !r.is_finite() {
            return Err(SimError::Divergence {
                round: r.round,
                detail: format!("non-finite metric for {} seed {}", r.algorithm, r.seed),
            });
        }
        if k > 0 {
            let prev = &rows[k - 1];
            if prev.algorithm == r.algorithm && prev.seed == r.seed && prev.round >= r.round {
                return Err(SimError::invalid(format!("rounds not increasing at row {k}")));
            }
        }
    }
    Ok(())
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows(rows: &[ResultRow], path: &Path, format: Format) -> Result<()> {
    check_rows(rows)?;
    write_table(rows, path, format)
}

/// Writes any serializable table as CSV or a JSON array.
pub fn write_table<T: Serialize>(rows: &[T], path: &Path, format: Format) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => write_csv(rows, file),
        Format::Json => {
            let mut file = file;
            serde_json::to_writer_pretty(&mut file, rows)?;
            file.write_all(b"\n")?;
            file.flush()?;
            Ok(())
        }
    }
}

pub fn read_csv_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(SimError::from)).collect()
}

/// Provenance for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// `git describe` of the working tree, when available.
    pub git: Option<String>,
    pub command: String,
    pub seeds: Vec<u64>,
    /// Echo of the effective configuration, if the command had one.
    pub config: Option<ExperimentConfig>,
    /// Preset parameters for preset runs.
    #[serde(default)]
    pub parameters: Option<serde_json::Value>,
    pub files: Vec<String>,
    pub elapsed_secs: f64,
}

impl Manifest {
    pub fn new(command: &str, seeds: Vec<u64>, git: Option<String>) -> Self {
        Self {
            tool: "fedawe-sim".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            git,
            command: command.into(),
            seeds,
            config: None,
            parameters: None,
            files: Vec::new(),
            elapsed_secs: 0.0,
        }
    }

    pub fn set_parameters<T: Serialize>(&mut self, params: &T) -> Result<()> {
        self.parameters = Some(serde_json::to_value(params)?);
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}
