//! Column-oriented CSV data with a mandatory header row.

use std::path::Path;

use crate::{CliError, CliResult};

/// Named numeric columns. Empty cells are skipped, so columns may differ in length.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let names: Vec<String> = reader
            .headers()
            .map_err(|e| e.to_string())?
            .iter()
            .map(str::to_string)
            .collect();
        if names.is_empty() || names.iter().any(String::is_empty) {
            return Err("header row must name every column".into());
        }
        let mut columns = vec![Vec::new(); names.len()];
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| e.to_string())?;
            for (j, cell) in record.iter().enumerate() {
                if cell.is_empty() {
                    continue;
                }
                let v: f64 = cell.parse().map_err(|_| {
                    format!("row {}, column `{}`: `{cell}` is not a number", row + 2, names[j])
                })?;
                if !v.is_finite() {
                    return Err(format!("row {}, column `{}`: non-finite value", row + 2, names[j]));
                }
                columns[j].push(v);
            }
        }
        Ok(Table { names, columns })
    }

    pub fn column(&self, name: &str) -> CliResult<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| {
                CliError::input(format!(
                    "data has no column `{name}` (columns: {})",
                    self.names.join(", ")
                ))
            })
    }

    /// The named columns, or the first `m` columns when no names are given.
    pub fn select(&self, names: Option<&[String]>, m: usize) -> CliResult<Vec<Vec<f64>>> {
        match names {
            Some(names) => {
                if names.len() != m {
                    return Err(CliError::input(format!(
                        "at `model.columns`: model has {m} samples but {} columns are named",
                        names.len()
                    )));
                }
                names.iter().map(|n| Ok(self.column(n)?.to_vec())).collect()
            }
            None => {
                if self.columns.len() < m {
                    return Err(CliError::input(format!(
                        "model has {m} samples but the data has {} columns",
                        self.columns.len()
                    )));
                }
                Ok(self.columns[..m].to_vec())
            }
        }
    }
}
