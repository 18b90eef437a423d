use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::warn;
use serde::{Deserialize, Serialize};

use super::config::Variant;
use super::runner::SplitMetrics;
use crate::error::Result;

/// Environment variable naming the results store file.
pub const RESULTS_ENV: &str = "CLIPFT_RESULTS";

/// Identity of one training run. Floats are compared by bit pattern.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub variant: Variant,
    pub fraction: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl RunKey {
    pub(crate) fn bits(&self) -> (Variant, u64, u64, u64, u64) {
        (self.variant, self.fraction.to_bits(), self.lr.to_bits(), self.weight_decay.to_bits(), self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Ok { metrics: SplitMetrics, final_train_loss: Option<f64> },
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(flatten)]
    pub key: RunKey,
    pub config_hash: String,
    #[serde(flatten)]
    pub outcome: RunOutcome,
}

impl RunRecord {
    pub fn metrics(&self) -> Option<&SplitMetrics> {
        match &self.outcome {
            RunOutcome::Ok { metrics, .. } => Some(metrics),
            RunOutcome::Failed { .. } => None,
        }
    }
}

/// Append-only JSON-lines ledger of finished runs for one configuration.
pub struct ResultsStore {
    path: Option<PathBuf>,
    config_hash: String,
    records: Mutex<BTreeMap<(Variant, u64, u64, u64, u64), RunRecord>>,
    file: Mutex<Option<File>>,
}

impl ResultsStore {
    /// Opens (creating if needed) the ledger at `path`, keeping only records
    /// written under `config_hash`.
    pub fn open(path: impl Into<PathBuf>, config_hash: &str) -> Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut records = BTreeMap::new();
        if path.exists() {
            for rec in read_records(&path)? {
                if rec.config_hash == config_hash {
                    records.insert(rec.key.bits(), rec);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path: Some(path),
            config_hash: config_hash.to_string(),
            records: Mutex::new(records),
            file: Mutex::new(Some(file)),
        })
    }

    /// A store that keeps records in memory only.
    pub fn in_memory(config_hash: &str) -> Self {
        Self {
            path: None,
            config_hash: config_hash.to_string(),
            records: Mutex::new(BTreeMap::new()),
            file: Mutex::new(None),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn get(&self, key: &RunKey) -> Option<RunRecord> {
        self.records.lock().expect("store lock").get(&key.bits()).cloned()
    }

    pub fn contains(&self, key: &RunKey) -> bool {
        self.records.lock().expect("store lock").contains_key(&key.bits())
    }

    /// Appends one record; the line is flushed before returning.
    pub fn append(&self, key: RunKey, outcome: RunOutcome) -> Result<RunRecord> {
        let rec = RunRecord { key, config_hash: self.config_hash.clone(), outcome };
        {
            let mut file = self.file.lock().expect("store lock");
            if let Some(f) = file.as_mut() {
                let mut line = serde_json::to_vec(&rec)?;
                line.push(b'\n');
                f.write_all(&line)?;
                f.flush()?;
            }
        }
        self.records.lock().expect("store lock").insert(key.bits(), rec.clone());
        Ok(rec)
    }

    /// All records, ordered by key.
    pub fn records(&self) -> Vec<RunRecord> {
        self.records.lock().expect("store lock").values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parses a ledger, skipping a torn final line left by an interrupted write.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(line) {
            Ok(r) => out.push(r),
            Err(e) if i + 1 == lines.len() => warn!("{}: ignoring torn last line: {e}", path.display()),
            Err(e) => {
                return Err(crate::error::Error::format("results store", format!("line {}: {e}", i + 1)));
            }
        }
    }
    Ok(out)
}
