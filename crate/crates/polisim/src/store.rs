//! The central repository: an append-only JSONL log with an in-memory
//! index, keyed by scenario id.
//!
//! One record per line, `{"kind","key","stored_at","body"}`, with `body`
//! holding the record's canonical JSON so the log doubles as a readable
//! audit trail. Dedup is first-write-wins per key with one refinement: an
//! error result never shadows a later non-error result for the same
//! scenario, so a poison-pill verdict can be superseded by a good replicate
//! while duplicate good results are dropped.
//!
//! Durability model: every put is flushed before returning; a torn trailing
//! line (the classic crash artifact) is detected on reopen and truncated
//! away before new appends. Torn or corrupt bytes anywhere *else* are
//! refused loudly. Single-writer enforcement is an advisory `flock` on a
//! sibling `.lock` file; read-only opens skip the lock and never repair.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use polisim_core::{CostPerDaly, EvaluationResult, Policy, ScenarioDocument};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("another process holds the write lock on {path}")]
    Locked { path: PathBuf },
    #[error("corrupt record on line {line} of {path}: {detail}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("store was opened read-only")]
    ReadOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Stored,
    /// The read view already covers this record; nothing was appended.
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RecordKind {
    Scenario,
    Result,
}

#[derive(Serialize, Deserialize)]
struct StoreLine {
    kind: RecordKind,
    key: String,
    /// Milliseconds since the Unix epoch.
    stored_at: u64,
    body: Box<RawValue>,
}

/// One aggregated policy for the results surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceRow {
    pub policy: Policy,
    /// Mean cost per DALY averted over effective replicates; `None` when
    /// every replicate was ineffective.
    pub mean_cost_per_daly: Option<f64>,
    /// Sample standard deviation (n−1); 0 for a single replicate.
    pub stddev: Option<f64>,
    /// Effective replicates aggregated into the mean.
    pub n: u32,
    pub ineffective_n: u32,
}

pub struct Store {
    path: PathBuf,
    file: Option<File>,
    _lock: Option<File>,
    scenarios: BTreeMap<String, ScenarioDocument>,
    results: BTreeMap<String, EvaluationResult>,
}

impl Store {
    /// Opens for writing: takes the advisory lock, loads the index, and
    /// truncates a torn trailing line if the last writer died mid-append.
    pub fn open(path: impl AsRef<Path>) -> Result<Store, StoreError> {
        let path = path.as_ref().to_path_buf();
        let lock = acquire_lock(&path)?;
        let mut file = File::options()
            .read(true)
            .write(true)
            .create(true)
            .open(&path)
            .map_err(|source| StoreError::Io {
                path: path.clone(),
                source,
            })?;
        let mut store = Store {
            path: path.clone(),
            file: None,
            _lock: Some(lock),
            scenarios: BTreeMap::new(),
            results: BTreeMap::new(),
        };
        let clean_len = store.load(&mut file)?;
        let io_err = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        file.set_len(clean_len).map_err(io_err)?;
        file.seek(SeekFrom::End(0)).map_err(|source| StoreError::Io {
            path: path.clone(),
            source,
        })?;
        store.file = Some(file);
        Ok(store)
    }

    /// Opens a read-only snapshot: no lock, no repair; a torn trailing
    /// line is ignored. A missing file reads as an empty store.
    pub fn open_read_only(path: impl AsRef<Path>) -> Result<Store, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut store = Store {
            path: path.clone(),
            file: None,
            _lock: None,
            scenarios: BTreeMap::new(),
            results: BTreeMap::new(),
        };
        match File::open(&path) {
            Ok(mut file) => {
                store.load(&mut file)?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(source) => return Err(StoreError::Io { path, source }),
        }
        Ok(store)
    }

    /// Indexes every complete line; returns the byte length of the clean
    /// prefix (everything up to and including the last complete record).
    fn load(&mut self, file: &mut File) -> Result<u64, StoreError> {
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|source| StoreError::Io {
            path: self.path.clone(),
            source,
        })?;
        let mut offset = 0usize;
        let mut line_no = 0usize;
        while let Some(newline) = bytes[offset..].iter().position(|&b| b == b'\n') {
            line_no += 1;
            let line = &bytes[offset..offset + newline];
            let parsed: StoreLine =
                serde_json::from_slice(line).map_err(|e| StoreError::Corrupt {
                    path: self.path.clone(),
                    line: line_no,
                    detail: e.to_string(),
                })?;
            self.index(parsed, line_no)?;
            offset += newline + 1;
        }
        // Anything after the final newline is a torn append.
        Ok(offset as u64)
    }

    fn index(&mut self, line: StoreLine, line_no: usize) -> Result<(), StoreError> {
        let corrupt = |detail: String| StoreError::Corrupt {
            path: self.path.clone(),
            line: line_no,
            detail,
        };
        match line.kind {
            RecordKind::Scenario => {
                let doc: ScenarioDocument = serde_json::from_str(line.body.get())
                    .map_err(|e| corrupt(e.to_string()))?;
                self.scenarios.entry(line.key).or_insert(doc);
            }
            RecordKind::Result => {
                let result: EvaluationResult = serde_json::from_str(line.body.get())
                    .map_err(|e| corrupt(e.to_string()))?;
                match self.results.get(&line.key) {
                    Some(existing) if existing.is_error() && !result.is_error() => {
                        self.results.insert(line.key, result);
                    }
                    Some(_) => {}
                    None => {
                        self.results.insert(line.key, result);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn put_scenario(&mut self, doc: &ScenarioDocument) -> Result<PutOutcome, StoreError> {
        if self.scenarios.contains_key(&doc.scenario_id) {
            return Ok(PutOutcome::Duplicate);
        }
        self.append(RecordKind::Scenario, &doc.scenario_id, &doc.canonical_json())?;
        self.scenarios.insert(doc.scenario_id.clone(), doc.clone());
        Ok(PutOutcome::Stored)
    }

    pub fn put_result(&mut self, result: &EvaluationResult) -> Result<PutOutcome, StoreError> {
        match self.results.get(&result.scenario_id) {
            Some(existing) if !existing.is_error() => return Ok(PutOutcome::Duplicate),
            Some(_) if result.is_error() => return Ok(PutOutcome::Duplicate),
            _ => {}
        }
        self.append(RecordKind::Result, &result.scenario_id, &result.canonical_json())?;
        self.results.insert(result.scenario_id.clone(), result.clone());
        Ok(PutOutcome::Stored)
    }

    fn append(&mut self, kind: RecordKind, key: &str, body: &str) -> Result<(), StoreError> {
        let file = self.file.as_mut().ok_or(StoreError::ReadOnly)?;
        let line = StoreLine {
            kind,
            key: key.to_string(),
            stored_at: wall_clock_ms(),
            body: RawValue::from_string(body.to_string()).expect("canonical JSON is valid"),
        };
        let mut serialized = serde_json::to_string(&line).expect("record serialization");
        serialized.push('\n');
        file.write_all(serialized.as_bytes())
            .and_then(|()| file.flush())
            .map_err(|source| StoreError::Io {
                path: self.path.clone(),
                source,
            })
    }

    pub fn get_scenario(&self, key: &str) -> Option<&ScenarioDocument> {
        self.scenarios.get(key)
    }

    pub fn has_scenario(&self, key: &str) -> bool {
        self.scenarios.contains_key(key)
    }

    /// The read view for a key: first non-error result if any arrived,
    /// otherwise the first error result.
    pub fn get_result(&self, key: &str) -> Option<&EvaluationResult> {
        self.results.get(key)
    }

    pub fn has_result(&self, key: &str) -> bool {
        self.results.contains_key(key)
    }

    pub fn results(&self) -> impl Iterator<Item = &EvaluationResult> {
        self.results.values()
    }

    pub fn scenario_count(&self) -> usize {
        self.scenarios.len()
    }

    pub fn result_count(&self) -> usize {
        self.results.len()
    }

    pub fn non_error_result_count(&self) -> usize {
        self.results.values().filter(|r| !r.is_error()).count()
    }

    /// Aggregates non-error results into one row per policy, sorted by
    /// (itn, irs). Ineffective replicates are tallied but kept out of the
    /// mean; results not yet completed against a baseline are skipped.
    pub fn query_surface(&self) -> Vec<SurfaceRow> {
        let mut grouped: BTreeMap<Policy, (Vec<f64>, u32)> = BTreeMap::new();
        for result in self.results.values().filter(|r| !r.is_error()) {
            let Some(cpda) = result.cost_per_daly_averted else {
                continue;
            };
            let entry = grouped.entry(result.policy).or_default();
            match cpda {
                CostPerDaly::Finite(v) => entry.0.push(v),
                CostPerDaly::Ineffective => entry.1 += 1,
            }
        }
        grouped
            .into_iter()
            .map(|(policy, (values, ineffective_n))| {
                let n = values.len() as u32;
                let (mean, stddev) = if values.is_empty() {
                    (None, None)
                } else {
                    let mean = values.iter().sum::<f64>() / values.len() as f64;
                    let stddev = if values.len() < 2 {
                        0.0
                    } else {
                        let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                        (ss / (values.len() - 1) as f64).sqrt()
                    };
                    (Some(mean), Some(stddev))
                };
                SurfaceRow {
                    policy,
                    mean_cost_per_daly: mean,
                    stddev,
                    n,
                    ineffective_n,
                }
            })
            .collect()
    }
}

fn acquire_lock(store_path: &Path) -> Result<File, StoreError> {
    let mut lock_path = store_path.as_os_str().to_owned();
    lock_path.push(".lock");
    let lock_path = PathBuf::from(lock_path);
    let file = File::options()
        .create(true)
        .write(true)
        .open(&lock_path)
        .map_err(|source| StoreError::Io {
            path: lock_path.clone(),
            source,
        })?;
    let rc = unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX | libc::LOCK_NB) };
    if rc != 0 {
        let errno = std::io::Error::last_os_error();
        return if errno.kind() == std::io::ErrorKind::WouldBlock {
            Err(StoreError::Locked { path: lock_path })
        } else {
            Err(StoreError::Io {
                path: lock_path,
                source: errno,
            })
        };
    }
    Ok(file)
}

fn wall_clock_ms() -> u64 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
