//! Tabular sample data: a matrix of observations (rows) by variables
//! (columns) with column labels, plus the single anomalous observation the
//! analysis revolves around.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sem::PerturbationSpec;

/// An `m x p` table of samples. Values are finite except at the ingest
/// boundary, where `NaN` marks missing cells until preprocessing removes
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: DMatrix<f64>,
    column_labels: Vec<String>,
}

impl Dataset {
    /// Finite data with at least two rows.
    pub fn new(values: DMatrix<f64>, column_labels: Vec<String>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::InvalidData(format!("need at least 2 rows, got {}", values.nrows())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite entry".into()));
        }
        Self::with_missing(values, column_labels)
    }

    /// Ingest-stage table: `NaN` entries allowed, any number of rows.
    pub fn with_missing(values: DMatrix<f64>, column_labels: Vec<String>) -> Result<Self> {
        if column_labels.len() != values.ncols() {
            return Err(Error::DimensionMismatch {
                expected: values.ncols(),
                got: column_labels.len(),
            });
        }
        Ok(Self { values, column_labels })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Number of rows (samples).
    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    /// Number of columns (variables).
    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn labels(&self) -> &[String] {
        &self.column_labels
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.column(i).iter().copied().collect()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    /// New dataset keeping only the given columns, in the given order.
    pub fn select_columns(&self, keep: &[usize]) -> Result<Self> {
        for &c in keep {
            if c >= self.p() {
                return Err(Error::InvalidData(format!("column {c} out of range")));
            }
        }
        let values = self.values.select_columns(keep.iter());
        let labels = keep.iter().map(|&c| self.column_labels[c].clone()).collect();
        Self::with_missing(values, labels)
    }

    /// Write as CSV with the labels as header row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.column_labels)?;
        for r in 0..self.m() {
            let row: Vec<String> =
                (0..self.p()).map(|c| format_cell(self.values[(r, c)])).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn format_cell(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        // Shortest representation that round-trips.
        format!("{v}")
    }
}

/// The single anomalous observation, with the generating perturbation kept
/// as ground truth when the sample is synthetic. Root-cause indices in
/// `ground_truth` refer to observed-column positions; latent root causes are
/// mapped to the first observed nodes they infect.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalousSample {
    pub values: DVector<f64>,
    pub ground_truth: Option<PerturbationSpec>,
}

impl AnomalousSample {
    pub fn new(values: DVector<f64>) -> Self {
        Self { values, ground_truth: None }
    }

    /// Write as a one-row CSV using the given header labels.
    pub fn write_csv(&self, labels: &[String], path: impl AsRef<Path>) -> Result<()> {
        if labels.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                got: labels.len(),
            });
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(labels)?;
        let row: Vec<String> = self.values.iter().map(|&v| format_cell(v)).collect();
        w.write_record(&row)?;
        w.flush()?;
        Ok(())
    }
}
