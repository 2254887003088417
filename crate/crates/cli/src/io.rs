//! CSV and JSON plumbing. Numeric CSV output uses 17 significant digits.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Reads a headed numeric CSV into a row-major matrix. A file without
/// records yields a matrix with zero rows.
pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    if !path.is_file() {
        return Err(CliError::file(path, "no such file"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::file(path, e))?;
    let width = reader.headers().map_err(|e| CliError::file(path, e))?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::file(path, e))?;
        if record.len() != width {
            return Err(CliError::file(path, format!("row {} has {} fields, expected {width}", line + 1, record.len())));
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::file(path, format!("row {}: '{field}' is not a number", line + 1)))?;
            if !v.is_finite() {
                return Err(CliError::file(path, format!("row {}: non-finite value '{field}'", line + 1)));
            }
            values.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, width, &values))
}

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writer for a headed CSV table.
pub struct Table {
    inner: csv::Writer<BufWriter<File>>,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::file(path, e))?;
        let mut inner = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(file));
        inner.write_record(header).map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(Self { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(|e| CliError::Runtime(e.to_string()))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner.flush().map_err(|e| CliError::Runtime(e.to_string()))
    }
}

/// Writes `m` with columns named `prefix1..prefixN`.
pub fn write_matrix(path: &Path, prefix: &str, m: &DMatrix<f64>) -> CliResult<()> {
    let header: Vec<String> = (1..=m.ncols()).map(|c| format!("{prefix}{c}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::create(path, &header)?;
    for row in m.row_iter() {
        t.row(row.iter().map(|&v| float(v)))?;
    }
    t.finish()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::file(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| CliError::file(path, e))
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::file(path, e))
}
