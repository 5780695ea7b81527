//! Per-round metrics and their CSV form.
//!
//! The CSV is UTF-8 with LF line endings and the fixed header [`CSV_HEADER`].
//! Floats are written in Rust's shortest round-trip form; an absent
//! `grad_norm_sq` is an empty field.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "round,step,env_interactions,comm_rounds,eval_return_mean,eval_return_std,grad_norm_sq,wall_ms";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub round: u64,
    pub step: u64,
    /// Actions taken by all agents so far, initialization rollouts included.
    pub env_interactions: u64,
    pub comm_rounds: u64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    /// `‖∇J(θ̄)‖²` from the exact oracle (tabular environments only).
    pub grad_norm_sq: Option<f64>,
    pub wall_ms: u64,
}

impl MetricsRecord {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.round,
            self.step,
            self.env_interactions,
            self.comm_rounds,
            self.eval_return_mean,
            self.eval_return_std,
            self.grad_norm_sq.map(|g| g.to_string()).unwrap_or_default(),
            self.wall_ms
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Parse { line: None, key: None, message: format!("expected 8 fields, got {}", fields.len()) });
        }
        fn num<T: std::str::FromStr>(field: &str, name: &str) -> Result<T> {
            field.trim().parse().map_err(|_| Error::Parse {
                line: None,
                key: Some(name.into()),
                message: format!("cannot parse `{field}`"),
            })
        }
        Ok(Self {
            round: num(fields[0], "round")?,
            step: num(fields[1], "step")?,
            env_interactions: num(fields[2], "env_interactions")?,
            comm_rounds: num(fields[3], "comm_rounds")?,
            eval_return_mean: num(fields[4], "eval_return_mean")?,
            eval_return_std: num(fields[5], "eval_return_std")?,
            grad_norm_sq: if fields[6].trim().is_empty() { None } else { Some(num(fields[6], "grad_norm_sq")?) },
            wall_ms: num(fields[7], "wall_ms")?,
        })
    }
}

pub trait MetricsSink {
    fn record(&mut self, record: &MetricsRecord) -> Result<()>;
}

impl MetricsSink for Vec<MetricsRecord> {
    fn record(&mut self, record: &MetricsRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &MetricsRecord) -> Result<()> {
        Ok(())
    }
}

/// Streams records to a CSV writer, header first. Rows are flushed as they
/// arrive so partial runs leave a readable file.
pub struct CsvSink<W: Write> {
    writer: W,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut writer: W) -> Result<Self> {
        writer.write_all(CSV_HEADER.as_bytes())?;
        writer.write_all(b"\n")?;
        Ok(Self { writer })
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl CsvSink<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        Self::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> MetricsSink for CsvSink<W> {
    fn record(&mut self, record: &MetricsRecord) -> Result<()> {
        self.writer.write_all(record.to_csv_line().as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Reads a metrics CSV written by [`CsvSink`].
pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(header))) if header.trim_end() == CSV_HEADER => {}
        Some((_, Ok(header))) => {
            return Err(Error::Parse { line: Some(1), key: None, message: format!("unexpected header `{header}`") })
        }
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(Error::Parse { line: Some(1), key: None, message: "empty metrics file".into() }),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = MetricsRecord::parse_csv_line(&line).map_err(|e| match e {
            Error::Parse { key, message, .. } => Error::Parse { line: Some(i + 1), key, message },
            other => other,
        })?;
        records.push(record);
    }
    Ok(records)
}
