//! CSV export of paths, observations, filter trajectories and densities.
//!
//! Files have a header row and one record per line, every number written with
//! 17 significant digits so that reading it back reproduces the `f64` exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path as FsPath;

use crate::error::{Error, Result};

/// A table of numbers with named columns.
pub trait CsvSeries {
    fn columns(&self) -> Vec<&'static str>;
    fn row_count(&self) -> usize;
    fn row(&self, i: usize) -> Vec<f64>;
}

pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_series<W: Write>(out: &mut W, series: &dyn CsvSeries) -> std::io::Result<()> {
    writeln!(out, "{}", series.columns().join(","))?;
    for i in 0..series.row_count() {
        let line: Vec<String> = series.row(i).into_iter().map(format_number).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Writes `series` to `path`, replacing any existing file.
pub fn export_csv(series: &dyn CsvSeries, path: impl AsRef<FsPath>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    write_series(&mut out, series)?;
    out.flush()?;
    Ok(())
}

/// Header and numeric records of a file written by [`export_csv`].
pub fn read_csv(path: impl AsRef<FsPath>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?.split(',').map(str::to_owned).collect(),
        None => return Err(Error::Io("empty csv file".into())),
    };
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let row = line
            .split(',')
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| Error::Io(format!("line {}: {v:?}: {e}", n + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Ad-hoc table, handy for one-off exports.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvSeries for Table {
    fn columns(&self) -> Vec<&'static str> {
        self.columns.clone()
    }
    fn row_count(&self) -> usize {
        self.rows.len()
    }
    fn row(&self, i: usize) -> Vec<f64> {
        self.rows[i].clone()
    }
}
