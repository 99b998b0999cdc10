//! Append-only metrics CSV with a fixed column order per task.
//!
//! Reals are written with Rust's shortest round-trip formatting, which is
//! independent of the locale.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rtrl_core::copy_train::CopyMetrics;
use rtrl_core::rl::TmazeMetrics;

use crate::config::TaskKind;
use crate::error::{CliError, CliResult};

pub const COPY_COLUMNS: [&str; 6] = ["step", "updates", "loss", "per_symbol_acc", "per_sequence_acc", "wall_ms"];
pub const TMAZE_COLUMNS: [&str; 5] = ["step", "updates", "loss", "success_rate", "wall_ms"];

pub fn columns(task: TaskKind) -> &'static [&'static str] {
    match task {
        TaskKind::Copy => &COPY_COLUMNS,
        TaskKind::Tmaze => &TMAZE_COLUMNS,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MetricsRow {
    Copy(CopyMetrics),
    Tmaze(TmazeMetrics),
}

impl MetricsRow {
    fn fields(&self, wall_ms: u64) -> Vec<String> {
        match self {
            MetricsRow::Copy(m) => vec![
                m.step.to_string(),
                m.updates.to_string(),
                m.loss.to_string(),
                m.per_symbol_acc.to_string(),
                m.per_sequence_acc.to_string(),
                wall_ms.to_string(),
            ],
            MetricsRow::Tmaze(m) => vec![
                m.step.to_string(),
                m.updates.to_string(),
                m.loss.to_string(),
                m.success_rate.to_string(),
                wall_ms.to_string(),
            ],
        }
    }
}

pub struct MetricsWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
    rows: u64,
}

impl MetricsWriter {
    /// Start a fresh file with a header row.
    pub fn create(path: &Path, task: TaskKind) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(columns(task)).map_err(|e| csv_err(path, e))?;
        inner.flush().map_err(|e| CliError::io(path, e))?;
        Ok(MetricsWriter { path: path.to_path_buf(), inner, rows: 0 })
    }

    /// Reopen an existing file keeping its header and the first `rows` data
    /// rows; anything written after the checkpoint is dropped.
    pub fn resume(path: &Path, task: TaskKind, rows: u64) -> CliResult<Self> {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut kept = Vec::new();
        for line in BufReader::new(file).lines().take(rows as usize + 1) {
            kept.push(line.map_err(|e| CliError::io(path, e))?);
        }
        let header = columns(task).join(",");
        if kept.first() != Some(&header) {
            return Err(CliError::Format(format!("{}: unexpected metrics header", path.display())));
        }
        if (kept.len() as u64) < rows + 1 {
            return Err(CliError::Format(format!("{}: fewer rows than the checkpoint recorded", path.display())));
        }
        let mut body = kept.join("\n");
        body.push('\n');
        std::fs::write(path, body).map_err(|e| CliError::io(path, e))?;
        let file = OpenOptions::new().append(true).open(path).map_err(|e| CliError::io(path, e))?;
        Ok(MetricsWriter { path: path.to_path_buf(), inner: csv::Writer::from_writer(file), rows })
    }

    pub fn write(&mut self, row: &MetricsRow, wall_ms: u64) -> CliResult<()> {
        self.inner.write_record(row.fields(wall_ms)).map_err(|e| csv_err(&self.path, e))?;
        self.inner.flush().map_err(|e| CliError::io(&self.path, e))?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Format(format!("{}: {e}", path.display()))
}

/// Read a metrics file back strictly: exact header, every field parsed.
pub fn read_metrics(path: &Path, task: TaskKind) -> CliResult<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    if header != columns(task) {
        return Err(CliError::Format(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| CliError::Format(format!("{}: bad field `{f}`", path.display()))))
            .collect::<CliResult<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}

/// Write a whole text file, replacing any previous content.
pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}
