//! Plot-ready output tables. Every file starts with a provenance line that
//! embeds the JSON config which produced it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::state_evolution::SEOutcome;
use crate::thresholds::{PhaseRow, SeedPoint, SpeedPoint};

/// Marker at the start of the CSV provenance line.
pub const PROVENANCE_PREFIX: &str = "# config: ";

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("row {row} has {got} cells, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
}

impl TableError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            // shortest round-trip form, always with '.' as separator
            Cell::Float(v) => format!("{v:?}"),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<Option<String>> for Cell {
    fn from(v: Option<String>) -> Self {
        v.map_or(Cell::Empty, Cell::Text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// Picks JSON for a `.json` extension, CSV otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// Homogeneous rows under a fixed column order, plus the producing config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub config: serde_json::Value,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<I, S>(config: serde_json::Value, columns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { config, columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<(), TableError> {
        if row.len() != self.columns.len() {
            return Err(TableError::Ragged { row: self.rows.len(), got: row.len(), expected: self.columns.len() });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[k]).collect())
    }

    pub fn write(&self, path: &Path, format: Format) -> Result<(), TableError> {
        let file = File::create(path).map_err(|e| TableError::io(path, e))?;
        let mut out = BufWriter::new(file);
        match format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut out, self)
                    .map_err(|e| TableError::Json { path: path.to_path_buf(), source: e })?;
                writeln!(out).map_err(|e| TableError::io(path, e))?;
            }
            Format::Csv => {
                let config = serde_json::to_string(&self.config)
                    .map_err(|e| TableError::Json { path: path.to_path_buf(), source: e })?;
                writeln!(out, "{PROVENANCE_PREFIX}{config}").map_err(|e| TableError::io(path, e))?;
                let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut out);
                let csv_err = |e| TableError::Csv { path: path.to_path_buf(), source: e };
                w.write_record(&self.columns).map_err(csv_err)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
                }
                w.flush().map_err(|e| TableError::io(path, e))?;
            }
        }
        out.flush().map_err(|e| TableError::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self, TableError> {
        let file = File::open(path).map_err(|e| TableError::io(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| TableError::Json { path: path.to_path_buf(), source: e })
    }

    /// Reads a CSV written by [`Table::write`]. Numeric-looking cells come
    /// back as numbers, blanks as [`Cell::Empty`].
    pub fn read_csv(path: &Path) -> Result<Self, TableError> {
        let file = File::open(path).map_err(|e| TableError::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| TableError::io(path, e))?;
        let json = first.trim_end().strip_prefix(PROVENANCE_PREFIX).ok_or_else(|| TableError::Malformed {
            path: path.to_path_buf(),
            reason: "missing provenance line".into(),
        })?;
        let config = serde_json::from_str(json).map_err(|e| TableError::Json { path: path.to_path_buf(), source: e })?;
        let mut r = csv::Reader::from_reader(reader);
        let csv_err = |e| TableError::Csv { path: path.to_path_buf(), source: e };
        let columns = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let mut table = Table { config, columns, rows: Vec::new() };
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            table.push(rec.iter().map(parse_cell).collect())?;
        }
        Ok(table)
    }
}

fn parse_cell(s: &str) -> Cell {
    if s.is_empty() {
        Cell::Empty
    } else if let Ok(v) = s.parse::<i64>() {
        Cell::Int(v)
    } else if let Ok(v) = s.parse::<f64>() {
        Cell::Float(v)
    } else {
        Cell::Text(s.to_string())
    }
}

pub fn write_table(table: &Table, path: &Path, format: Format) -> Result<(), TableError> {
    table.write(path, format)
}

pub fn phase_table(rows: &[PhaseRow], config: serde_json::Value) -> Table {
    let mut t = Table::new(config, ["rho", "w", "alpha_bp", "alpha_w", "alpha_c_proxy", "error"]);
    for r in rows {
        t.rows.push(vec![
            r.rho.into(),
            r.w.into(),
            r.alpha_bp.into(),
            r.alpha_w.into(),
            r.alpha_c_proxy.into(),
            r.error.clone().into(),
        ]);
    }
    t
}

pub fn seed_table(points: &[SeedPoint], config: serde_json::Value) -> Table {
    let mut t = Table::new(config, ["w_s", "alpha_s_star", "alpha_eff"]);
    for p in points {
        t.rows.push(vec![p.w_s.into(), p.alpha_s_star.into(), p.alpha_eff.into()]);
    }
    t
}

/// Wide layout: one `speed_A=<tilt>` column per tilt, rows keyed by `alpha_b`
/// in first-seen order. Degenerate points (no fit window, e.g. the whole bulk
/// reconstructing at once) are left blank.
pub fn speed_table(points: &[SpeedPoint], tilts: &[f64], config: serde_json::Value) -> Table {
    let mut columns = vec!["alpha_b".to_string()];
    columns.extend(tilts.iter().map(|a| format!("speed_A={a}")));
    let mut t = Table::new(config, columns);
    let mut alphas: Vec<f64> = Vec::new();
    for p in points {
        if !alphas.iter().any(|&a| a == p.alpha_b) {
            alphas.push(p.alpha_b);
        }
    }
    for &a in &alphas {
        let mut row = vec![Cell::Float(a)];
        for &tilt in tilts {
            let v = points
                .iter()
                .find(|p| p.alpha_b == a && p.tilt == tilt && !p.degenerate)
                .map(|p| p.speed);
            row.push(v.into());
        }
        t.rows.push(row);
    }
    t
}

/// `(iteration, front_position, mean_mse, max_mse)` for every iteration.
pub fn trajectory_table<T: Scalar>(outcome: &SEOutcome<T>, config: serde_json::Value) -> Table {
    let mut t = Table::new(config, ["iteration", "front_position", "mean_mse", "max_mse"]);
    for (k, &(it, front)) in outcome.front_trace.iter().enumerate() {
        t.rows.push(vec![
            it.into(),
            front.into(),
            outcome.mean_mse_trace[k].to_f64_lossy().into(),
            outcome.max_mse_trace[k].to_f64_lossy().into(),
        ]);
    }
    t
}

/// Long layout `(iteration, block, <value>)`, iterations counted from 1.
pub fn block_table<T: Scalar>(profiles: &[Vec<T>], value: &str, config: serde_json::Value) -> Table {
    let mut t = Table::new(config, ["iteration", "block", value]);
    for (it, p) in profiles.iter().enumerate() {
        for (b, &e) in p.iter().enumerate() {
            t.rows.push(vec![(it + 1).into(), b.into(), e.to_f64_lossy().into()]);
        }
    }
    t
}
