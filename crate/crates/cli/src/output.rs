//! Versioned CSV and meta files. Floats are written in `{:e}` form, which
//! is exact and locale-free; non-finite values are refused.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// Bumped whenever a column is renamed, removed or changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
    /// Empty field, e.g. an undefined ratio.
    Missing,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Float)
    }
}

pub struct CsvFile {
    writer: csv::Writer<BufWriter<File>>,
    path: PathBuf,
    header: Vec<String>,
}

impl CsvFile {
    pub fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self> {
        let path = dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "# stacknash-csv schema {SCHEMA_VERSION}")?;
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(buf);
        writer.write_record(header)?;
        Ok(Self {
            writer,
            path,
            header: header.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn row(&mut self, cells: &[Cell]) -> Result<()> {
        if cells.len() != self.header.len() {
            bail!(
                "{}: row has {} fields, header has {}",
                self.path.display(),
                cells.len(),
                self.header.len()
            );
        }
        let mut record = Vec::with_capacity(cells.len());
        for (cell, col) in cells.iter().zip(&self.header) {
            record.push(match cell {
                Cell::Float(v) if !v.is_finite() => {
                    bail!("{}: non-finite value {v} in column `{col}`", self.path.display())
                }
                Cell::Float(v) => format!("{v:e}"),
                Cell::Int(v) => v.to_string(),
                Cell::Text(s) => s.clone(),
                Cell::Missing => String::new(),
            });
        }
        self.writer.write_record(&record)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer
            .flush()
            .with_context(|| format!("writing {}", self.path.display()))?;
        Ok(())
    }
}

/// `summary.csv` as ordered `key,value` rows.
#[derive(Default)]
pub struct Summary {
    rows: Vec<(String, Cell)>,
}

impl Summary {
    pub fn put(&mut self, key: &str, value: impl Into<Cell>) -> &mut Self {
        self.rows.push((key.into(), value.into()));
        self
    }

    pub fn write(self, dir: &Path) -> Result<()> {
        let mut f = CsvFile::create(dir, "summary.csv", &["key", "value"])?;
        for (k, v) in self.rows {
            f.row(&[Cell::Text(k), v])?;
        }
        f.finish()
    }
}

pub struct Meta<'a> {
    pub subcommand: &'a str,
    pub config_hash: &'a str,
    pub seed: u64,
}

pub fn write_meta(dir: &Path, meta: &Meta) -> Result<()> {
    let text = format!(
        "schema = {SCHEMA_VERSION}\ntool = stacknash {}\nsubcommand = {}\nconfig_sha256 = {}\nseed = {}\n",
        env!("CARGO_PKG_VERSION"),
        meta.subcommand,
        meta.config_hash,
        meta.seed
    );
    std::fs::write(dir.join("meta.txt"), text).context("writing meta.txt")
}
