//! Instance files and result CSVs.
//!
//! An instance file is a JSON object:
//!
//! ```json
//! {
//!   "m": 25, "n": 50, "l": 3,
//!   "phi":   [ ... m*n reals, row-major ... ],
//!   "y":     [ ... m*l reals, row-major ... ],
//!   "truth": [ ... n*l reals, row-major ... ],
//!   "metadata": { "seed": 7, "spec": { "m": 25, "n": 50, ... } }
//! }
//! ```
//!
//! `truth` and `metadata` may be omitted or `null`.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{CellSummary, TrialRecord};
use crate::datagen::GenSpec;
use crate::error::{Error, Result};
use crate::model::ProblemInstance;

pub const SUMMARY_HEADER: [&str; 6] = ["sweep_value", "beta", "method", "trials", "success_rate", "mean_nmse"];
pub const TRIAL_HEADER: [&str; 8] = ["seed", "sweep_value", "beta", "method", "nmse", "success", "iterations", "wall_ms"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<GenSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub m: usize,
    pub n: usize,
    pub l: usize,
    pub phi: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<InstanceMetadata>,
}

fn row_major(mat: &DMatrix<f64>) -> Vec<f64> {
    mat.transpose().as_slice().to_vec()
}

fn from_row_major(rows: usize, cols: usize, data: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::invalid(format!(
            "{what} has {} entries, expected {rows}x{cols}",
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

impl InstanceFile {
    pub fn from_instance(inst: &ProblemInstance, metadata: Option<InstanceMetadata>) -> Self {
        Self {
            m: inst.m(),
            n: inst.n(),
            l: inst.l(),
            phi: row_major(inst.phi()),
            y: row_major(inst.y()),
            truth: inst.truth().map(row_major),
            metadata,
        }
    }

    pub fn to_instance(&self) -> Result<ProblemInstance> {
        let phi = from_row_major(self.m, self.n, &self.phi, "phi")?;
        let y = from_row_major(self.m, self.l, &self.y, "y")?;
        let truth = self
            .truth
            .as_deref()
            .map(|t| from_row_major(self.n, self.l, t, "truth"))
            .transpose()?;
        ProblemInstance::new(phi, y, truth)
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

/// 17 significant digits, scientific notation.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_beta(beta: Option<f64>) -> String {
    beta.map(fmt_real).unwrap_or_default()
}

pub fn write_summary_csv<W: Write>(writer: W, cells: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for c in cells {
        w.write_record([
            fmt_real(c.sweep_value),
            fmt_beta(c.beta),
            c.method.to_string(),
            c.trials.to_string(),
            fmt_real(c.success_rate),
            fmt_real(c.mean_nmse),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trials_csv<W: Write>(writer: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRIAL_HEADER)?;
    for r in records {
        w.write_record([
            r.seed.to_string(),
            fmt_real(r.sweep_value),
            fmt_beta(r.beta),
            r.method.to_string(),
            fmt_real(r.nmse),
            r.success.to_string(),
            r.iterations.to_string(),
            fmt_real(r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}
