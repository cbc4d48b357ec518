//! Run directories: metric log, manifest and final checkpoint.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::{Result, SsflError};
use crate::model::ParameterState;
use crate::orchestrator::RoundRecord;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "final.ckpt";

/// One JSON object per line, in round order.
pub fn records_to_jsonl(records: &[RoundRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| SsflError::Format(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Streams records to a file as rounds complete.
pub struct RecordWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RecordWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| SsflError::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn append(&mut self, record: &RoundRecord) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| SsflError::Format(e.to_string()))?;
        writeln!(self.out, "{line}").and_then(|_| self.out.flush()).map_err(|e| SsflError::io(&self.path, e))
    }
}

pub fn write_manifest(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, config.to_manifest_json()?).map_err(|e| SsflError::io(&path, e))
}

pub fn write_checkpoint(dir: &Path, state: &ParameterState) -> Result<()> {
    let path = dir.join(CHECKPOINT_FILE);
    let file = File::create(&path).map_err(|e| SsflError::io(&path, e))?;
    let mut out = BufWriter::new(file);
    state
        .write_checkpoint(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| SsflError::io(&path, e))
}

/// Reads a JSONL metric log; a bad line is a format error naming its
/// 1-based line number.
pub fn read_records(path: &Path) -> Result<Vec<RoundRecord>> {
    let file = File::open(path).map_err(|e| SsflError::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| SsflError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| SsflError::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        records.push(record);
    }
    Ok(records)
}
