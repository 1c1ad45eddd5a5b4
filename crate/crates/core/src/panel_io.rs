//! Headerless numeric CSV for panels and targets.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Reads a rectangular headerless CSV of finite numbers.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::parse(path, format!("row {} has {} fields, expected {c}", i + 1, record.len())));
            }
            _ => {}
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(path, format!("row {}, column {}: '{field}' is not a number", i + 1, j + 1)))?;
            if !v.is_finite() {
                return Err(Error::parse(path, format!("row {}, column {}: non-finite value", i + 1, j + 1)));
            }
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::parse(path, "file is empty"))?;
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Writes one CSV row per matrix row with round-trip precision.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    for row in m.row_iter() {
        writer
            .write_record(row.iter().map(|v| format!("{v:e}")))
            .map_err(|e| Error::parse(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
