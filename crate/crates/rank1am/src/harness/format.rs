//! Plain-text output: 17-significant-digit reals and a minimal CSV writer.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// Scientific notation with 17 significant digits; non-finite values as
/// `inf`, `-inf`, `nan`.
pub fn real(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Inverse of [`real`]; also accepts anything `f64::from_str` does.
pub fn parse_real(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "nan" => Some(f64::NAN),
        t => t.parse().ok(),
    }
}

pub struct CsvWriter {
    path: PathBuf,
    out: BufWriter<File>,
    columns: usize,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self { path: path.to_path_buf(), out: BufWriter::new(file), columns: header.len() };
        w.raw_row(header.iter().map(|s| s.to_string()))?;
        Ok(w)
    }

    fn raw_row(&mut self, fields: impl Iterator<Item = String>) -> Result<()> {
        let line = fields.collect::<Vec<_>>().join(",");
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn row(&mut self, fields: Vec<String>) -> Result<()> {
        debug_assert_eq!(fields.len(), self.columns, "{}", self.path.display());
        self.raw_row(fields.into_iter())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
