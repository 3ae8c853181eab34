use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_MAJOR: u32 = 1;
pub const SCHEMA_MINOR: u32 = 0;
const SCHEMA_PREFIX: &str = "#imlab-metrics ";
pub const STORE_FILE: &str = "metrics.csv";

/// One completed (or failed) cell. Empty optional fields mean "not measured".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub cell_hash: String,
    pub config_hash: String,
    pub env: String,
    pub objective: String,
    pub regime: String,
    pub pretrain_size: usize,
    pub finetune_size: usize,
    pub step_gap: usize,
    pub seed: u64,
    pub success_rate: Option<f64>,
    pub std_error: Option<f64>,
    pub episodes: usize,
    pub pretrain_loss: Option<f64>,
    pub finetune_val_loss: Option<f64>,
    pub probe_state_mse: Option<f64>,
    pub probe_state_normalized: Option<f64>,
    pub alignment: Option<f64>,
    pub wall_seconds: f64,
    pub threads: usize,
    pub code_version: String,
    /// Error tag for failed cells; empty on success.
    pub error: String,
}

impl MetricsRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_empty()
    }
}

pub fn store_path(dir: &Path) -> PathBuf {
    dir.join(STORE_FILE)
}

fn schema_line() -> String {
    format!("{SCHEMA_PREFIX}{SCHEMA_MAJOR}.{SCHEMA_MINOR}")
}

fn check_schema(line: &str, path: &Path) -> Result<()> {
    let loc = || format!("{}:1", path.display());
    let version =
        line.trim_end().strip_prefix(SCHEMA_PREFIX).ok_or_else(|| Error::config(loc(), "missing schema line"))?;
    let major: u32 = version
        .split('.')
        .next()
        .and_then(|m| m.parse().ok())
        .ok_or_else(|| Error::config(loc(), format!("bad schema version {version:?}")))?;
    if major != SCHEMA_MAJOR {
        return Err(Error::config(
            loc(),
            format!("unsupported schema major version {major} (expected {SCHEMA_MAJOR})"),
        ));
    }
    Ok(())
}

/// Reads every record; a missing file is an empty store.
pub fn read_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    if first.is_empty() {
        return Ok(Vec::new());
    }
    check_schema(&first, path)?;
    let mut csv = csv::Reader::from_reader(reader);
    csv.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::config(format!("{}:{}", path.display(), i + 3), e.to_string())))
        .collect()
}

/// Append-only writer. Only one should exist per store at a time.
pub struct StoreWriter {
    csv: csv::Writer<File>,
    path: PathBuf,
}

impl StoreWriter {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        if !fresh {
            let mut first = String::new();
            BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
                .read_line(&mut first)
                .map_err(|e| Error::io(path, e))?;
            check_schema(&first, path)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        if fresh {
            writeln!(file, "{}", schema_line()).map_err(|e| Error::io(path, e))?;
        }
        let csv = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        Ok(StoreWriter { csv, path: path.to_path_buf() })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        let path = &self.path;
        self.csv.serialize(record).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        self.csv.flush().map_err(|e| Error::io(path, e))
    }
}
