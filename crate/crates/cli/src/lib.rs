//! Experiment driver: resolves an [`ExperimentConfig`], runs one study and writes a CSV
//! plus a JSON manifest.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure. When a study fails
//! part way, the rows already computed stay in the CSV and an `ERROR` marker row follows.

pub mod config;
mod studies;

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use clap::Parser;
use serde::Serialize;

pub use config::{Command, ExperimentConfig, FileConfig, Flags};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] pyrdg::PyrError),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Output(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

/// CSV sink that flushes after every row, so partial results survive a failure.
pub struct CsvSink {
    writer: csv::Writer<File>,
    columns: usize,
    rows: usize,
}

impl CsvSink {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(header)?;
        writer.flush()?;
        Ok(Self {
            writer,
            columns: header.len(),
            rows: 0,
        })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        debug_assert_eq!(fields.len(), self.columns);
        self.writer.write_record(fields)?;
        self.writer.flush()?;
        self.rows += 1;
        Ok(())
    }

    /// `ERROR,<message>,,...` padded to the header width.
    pub fn error_marker(&mut self, message: &str) -> Result<(), CliError> {
        let mut fields = vec![String::new(); self.columns.max(2)];
        fields[0] = "ERROR".into();
        fields[1] = message.replace(['\n', '\r'], " ");
        fields.truncate(self.columns.max(2));
        self.writer.write_record(&fields)?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Formats a real so that it parses back to the same bits.
pub fn real(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    library: &'static str,
    library_version: &'static str,
    status: &'a str,
    error: Option<String>,
    rows: usize,
    wall_time_seconds: f64,
}

/// Runs the study and writes the CSV and manifest.
pub fn run(config: &ExperimentConfig) -> Result<usize, CliError> {
    let start = Instant::now();
    let result = studies::run_study(config);
    let (status, error, rows) = match &result {
        Ok(rows) => ("ok", None, *rows),
        Err(e) => ("failed", Some(e.to_string()), 0),
    };
    let manifest = Manifest {
        config,
        library: "pyrdg",
        library_version: env!("CARGO_PKG_VERSION"),
        status,
        error,
        rows,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Output(e.to_string()))?;
    let mut f = File::create(config.manifest_path())?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    result
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let flags = match Flags::try_parse_from(args) {
        Ok(f) => f,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let config = match ExperimentConfig::from_flags(flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("pyrdg: {e}");
            return e.exit_code();
        }
    };
    match run(&config) {
        Ok(rows) => {
            eprintln!("pyrdg: wrote {rows} rows to {}", config.out.display());
            0
        }
        Err(e) => {
            eprintln!("pyrdg: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_row_follows_partial_output() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let mut sink = CsvSink::create(&path, &["a", "b", "c"]).unwrap();
        sink.row(&["1".into(), "2".into(), "3".into()]).unwrap();
        sink.error_marker("bad\nthing").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "a,b,c\n1,2,3\nERROR,bad thing,\n");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Numerical(pyrdg::PyrError::StaleTraces).exit_code(), 3);
    }

    #[test]
    fn reals_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 2.5e10] {
            assert_eq!(real(x).parse::<f64>().unwrap(), x);
        }
    }
}
