//! Column-oriented result tables with CSV and JSON output.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Number(f64),
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Number(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Number(v as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnValues {
    Number(Vec<f64>),
    Text(Vec<String>),
}

impl ColumnValues {
    pub fn len(&self) -> usize {
        match self {
            ColumnValues::Number(v) => v.len(),
            ColumnValues::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn render(&self, row: usize) -> String {
        match self {
            ColumnValues::Number(v) => v[row].to_string(),
            ColumnValues::Text(v) => v[row].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: ColumnValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub experiment: String,
    pub seed: u64,
    pub permutations: Vec<usize>,
    pub alpha: f64,
    pub trials: usize,
    /// Library name and version that produced the table.
    pub provenance: String,
    /// The full configuration the runner was called with.
    pub config: serde_json::Value,
}

impl TableMetadata {
    pub fn new(experiment: &str, seed: u64, permutations: Vec<usize>, alpha: f64, trials: usize, config: serde_json::Value) -> Self {
        Self {
            experiment: experiment.to_string(),
            seed,
            permutations,
            alpha,
            trials,
            provenance: concat!("repsim ", env!("CARGO_PKG_VERSION")).to_string(),
            config,
        }
    }
}

/// Named, equal-length columns of text or finite numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub metadata: TableMetadata,
    pub columns: Vec<Column>,
}

impl ExperimentTable {
    /// Builds a table from rows. A column's kind is fixed by its first row.
    pub fn from_rows(metadata: TableMetadata, headers: &[&str], rows: Vec<Vec<Cell>>) -> Result<Self> {
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != headers.len()) {
            return Err(Error::param(format!(
                "row {i} has {} cells, expected {}",
                row.len(),
                headers.len()
            )));
        }
        let mut columns: Vec<Column> = headers
            .iter()
            .enumerate()
            .map(|(j, name)| Column {
                name: name.to_string(),
                values: match rows.first().map(|r| &r[j]) {
                    Some(Cell::Text(_)) => ColumnValues::Text(Vec::new()),
                    _ => ColumnValues::Number(Vec::new()),
                },
            })
            .collect();
        for (i, row) in rows.into_iter().enumerate() {
            for (col, cell) in columns.iter_mut().zip(row) {
                match (&mut col.values, cell) {
                    (ColumnValues::Number(v), Cell::Number(x)) => {
                        if !x.is_finite() {
                            return Err(Error::param(format!(
                                "non-finite value {x} in column {} row {i}",
                                col.name
                            )));
                        }
                        v.push(x)
                    }
                    (ColumnValues::Text(v), Cell::Text(s)) => v.push(s),
                    _ => {
                        return Err(Error::param(format!(
                            "mixed cell kinds in column {}",
                            col.name
                        )))
                    }
                }
            }
        }
        Ok(Self { metadata, columns })
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }

    pub fn column(&self, name: &str) -> Option<&ColumnValues> {
        self.columns.iter().find(|c| c.name == name).map(|c| &c.values)
    }

    pub fn numbers(&self, name: &str) -> Option<&[f64]> {
        match self.column(name)? {
            ColumnValues::Number(v) => Some(v),
            ColumnValues::Text(_) => None,
        }
    }

    pub fn texts(&self, name: &str) -> Option<&[String]> {
        match self.column(name)? {
            ColumnValues::Text(v) => Some(v),
            ColumnValues::Number(_) => None,
        }
    }

    /// Indices of rows whose text column `name` equals `value`.
    pub fn rows_where(&self, name: &str, value: &str) -> Vec<usize> {
        self.texts(name)
            .map(|v| v.iter().enumerate().filter(|(_, s)| *s == value).map(|(i, _)| i).collect())
            .unwrap_or_default()
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for row in 0..self.n_rows() {
            w.write_record(self.columns.iter().map(|c| c.values.render(row)))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()? + "\n")?;
        Ok(())
    }
}

/// Result of one built-in assertion on an experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name, if self.passed { "PASS" } else { "FAIL" })?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}
