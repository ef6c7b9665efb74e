//! CSV ingestion and export with declared column roles.

use std::path::{Path, PathBuf};

use thiserror::Error;
use winratio::model::{Column, ColumnData, Dataset};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: no header row")]
    NoHeader { path: PathBuf },
    #[error("{path}: unknown column '{column}' (available: {available})")]
    UnknownColumn {
        path: PathBuf,
        column: String,
        available: String,
    },
    #[error("{path}: treatment column '{column}' has value '{value}' on row {row}; expected 0 or 1")]
    NonBinaryTreatment {
        path: PathBuf,
        column: String,
        row: usize,
        value: String,
    },
    #[error("{path}: missing cells on rows {rows}")]
    MissingCells { path: PathBuf, rows: String },
    #[error("{path}: column '{column}' row {row}: '{value}' is not a number")]
    NotNumeric {
        path: PathBuf,
        column: String,
        row: usize,
        value: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

/// Column roles for reading or writing a dataset.
#[derive(Debug, Clone, Default)]
pub struct Roles {
    pub treatment: String,
    /// Empty means every remaining column.
    pub covariates: Vec<String>,
    pub categorical: Vec<String>,
    pub outcomes: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || ["na", "n/a", "nan", "null"].contains(&c.to_ascii_lowercase().as_str())
}

fn list_rows(rows: &[usize]) -> String {
    let shown: Vec<String> = rows.iter().take(20).map(|r| r.to_string()).collect();
    if rows.len() > 20 {
        format!("{} and {} more", shown.join(", "), rows.len() - 20)
    } else {
        shown.join(", ")
    }
}

/// Read a header-row CSV into a dataset. Row numbers in errors count data
/// rows from 1.
pub fn ingest_csv(path: &Path, roles: &Roles) -> Result<Dataset, DataError> {
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.is_empty() {
        return Err(DataError::NoHeader { path: path.to_path_buf() });
    }
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| DataError::UnknownColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
            available: header.join(", "),
        })
    };
    let t_col = find(&roles.treatment)?;
    let y_cols: Vec<usize> = roles.outcomes.iter().map(|o| find(o)).collect::<Result<_, _>>()?;
    let x_names: Vec<String> = if roles.covariates.is_empty() {
        header
            .iter()
            .filter(|h| **h != roles.treatment && !roles.outcomes.contains(h))
            .cloned()
            .collect()
    } else {
        roles.covariates.clone()
    };
    let x_cols: Vec<usize> = x_names.iter().map(|c| find(c)).collect::<Result<_, _>>()?;
    for c in &roles.categorical {
        if !x_names.contains(c) {
            find(c)?;
            return Err(DataError::Invalid {
                path: path.to_path_buf(),
                message: format!("categorical column '{c}' is not a covariate"),
            });
        }
    }
    let used: Vec<usize> = std::iter::once(t_col).chain(y_cols.iter().copied()).chain(x_cols.iter().copied()).collect();

    let mut records = Vec::new();
    let mut missing = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if used.iter().any(|&c| rec.get(c).is_none_or(is_missing)) {
            missing.push(i + 1);
        }
        records.push(rec);
    }
    if !missing.is_empty() {
        return Err(DataError::MissingCells {
            path: path.to_path_buf(),
            rows: list_rows(&missing),
        });
    }
    let number = |col: usize, row: usize, cell: &str| {
        cell.parse::<f64>().map_err(|_| DataError::NotNumeric {
            path: path.to_path_buf(),
            column: header[col].clone(),
            row: row + 1,
            value: cell.to_string(),
        })
    };
    let mut treatment = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let cell = &rec[t_col];
        match cell.parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => treatment.push(v as u8),
            _ => {
                return Err(DataError::NonBinaryTreatment {
                    path: path.to_path_buf(),
                    column: roles.treatment.clone(),
                    row: i + 1,
                    value: cell.to_string(),
                })
            }
        }
    }
    let mut outcomes = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let y = y_cols.iter().map(|&c| number(c, i, &rec[c])).collect::<Result<Vec<_>, _>>()?;
        outcomes.push(y);
    }
    let mut columns = Vec::with_capacity(x_cols.len());
    for (name, &c) in x_names.iter().zip(&x_cols) {
        if roles.categorical.contains(name) {
            let labels: Vec<&str> = records.iter().map(|r| &r[c]).collect();
            columns.push(Column::categorical(name.clone(), &labels));
        } else {
            let values = records
                .iter()
                .enumerate()
                .map(|(i, r)| number(c, i, &r[c]))
                .collect::<Result<Vec<_>, _>>()?;
            columns.push(Column::numeric(name.clone(), values));
        }
    }
    Dataset::new(columns, treatment, outcomes).map_err(|e| DataError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Write covariates, treatment and outcomes with a header row.
/// `roles.covariates` is ignored; every dataset column is written.
pub fn write_csv(d: &Dataset, path: &Path, roles: &Roles) -> Result<(), DataError> {
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    if roles.outcomes.len() != d.d() {
        return Err(DataError::Invalid {
            path: path.to_path_buf(),
            message: format!("{} outcome names for {} outcome columns", roles.outcomes.len(), d.d()),
        });
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = d.columns().iter().map(|c| c.name.clone()).collect();
    header.push(roles.treatment.clone());
    header.extend(roles.outcomes.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..d.n() {
        row.clear();
        for c in d.columns() {
            row.push(match &c.data {
                ColumnData::Numeric(v) => v[i].to_string(),
                ColumnData::Categorical { levels, codes } => levels[codes[i] as usize].clone(),
            });
        }
        row.push(d.treatment()[i].to_string());
        row.extend(d.outcome(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}
