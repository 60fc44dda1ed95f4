//! Delimited text with an optional header row. Numbers always use `.` as
//! decimal separator and are parsed without regard to the system locale.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::payload::{default_dim_names, PointPayload};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_header: true,
        }
    }
}

impl CsvOptions {
    pub fn validate(&self) -> Result<()> {
        if self.delimiter == b'.' || !self.delimiter.is_ascii() {
            return Err(CoreError::InvalidParameter(format!(
                "`{}` cannot be used as delimiter",
                self.delimiter as char
            )));
        }
        Ok(())
    }
}

pub fn read_csv(reader: impl Read, opts: CsvOptions) -> Result<PointPayload> {
    opts.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut names: Option<Vec<String>> = None;
    let mut width: Option<usize> = None;
    let mut values = Vec::new();
    let mut rows = 0;
    for (index, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CoreError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            column: None,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(index + 1, |p| p.line() as usize);
        match width {
            Some(w) if w != record.len() => {
                return Err(CoreError::Parse {
                    line,
                    column: None,
                    message: format!("expected {w} fields, found {}", record.len()),
                })
            }
            _ => width = Some(record.len()),
        }
        if index == 0 && opts.has_header {
            names = Some(record.iter().map(str::to_string).collect());
            continue;
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f32 = cell.parse().map_err(|_| CoreError::Parse {
                line,
                column: Some(col + 1),
                message: format!("`{cell}` is not a number"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let dims = width.ok_or_else(|| CoreError::Format("empty CSV input".into()))?;
    let names = names.unwrap_or_else(|| default_dim_names(dims));
    PointPayload::new(values, rows, dims, names)
}

pub fn load_csv(path: &Path, opts: CsvOptions) -> Result<PointPayload> {
    read_csv(BufReader::new(File::open(path)?), opts)
}

/// Writes rows of `num_dims` values. Values are printed in their shortest
/// exactly round-tripping decimal form.
pub fn write_csv(
    writer: impl Write,
    values: &[f32],
    num_dims: usize,
    dim_names: &[String],
    opts: CsvOptions,
) -> Result<()> {
    opts.validate()?;
    let mut w = csv::WriterBuilder::new()
        .delimiter(opts.delimiter)
        .from_writer(writer);
    let csv_err = |e: csv::Error| CoreError::Io(std::io::Error::other(e));
    if opts.has_header {
        w.write_record(dim_names).map_err(csv_err)?;
    }
    for row in values.chunks(num_dims.max(1)) {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(path: &Path, payload: &PointPayload, opts: CsvOptions) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    write_csv(file, payload.values(), payload.num_dims(), payload.dim_names(), opts)
}
