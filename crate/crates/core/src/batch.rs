//! Corpus-scale extraction with a worker pool.
//!
//! Each record's seed is derived from the global seed and the record's
//! output id, so results do not depend on worker count, scheduling or the
//! order of records in the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::colordist::SlicParams;
use crate::condition::{extract_bundle_timed, save_bundle};
use crate::filtering::KernelSchedule;
use crate::imageio;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("duplicate output id {id:?} (records {first} and {second})")]
    DuplicateId { id: String, first: usize, second: usize },
    #[error("invalid batch configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl BatchRecord {
    /// Explicit id, else the image file stem.
    pub fn output_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".into())
        })
    }
}

/// Parses line-delimited JSON records; blank lines and `#` comments are
/// skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<BatchRecord>, BatchError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| BatchError::Manifest {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<BatchRecord>, BatchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BatchError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_manifest(&text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchConfig {
    /// Relative image paths are resolved against this directory.
    pub input_root: Option<PathBuf>,
    /// Bundles are written to `output_root/<id>/`.
    pub output_root: PathBuf,
    pub workers: usize,
    pub schedule: KernelSchedule,
    pub slic: SlicParams,
    pub seed: u64,
}

/// Seed for the record with output id `id`.
pub fn record_seed(global_seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RecordStatus {
    Ok {
        bundle: PathBuf,
        seed: u64,
        k: usize,
        structure_ms: f64,
        color_ms: f64,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordReport {
    pub index: usize,
    pub id: String,
    pub image: PathBuf,
    #[serde(flatten)]
    pub status: RecordStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub records: Vec<RecordReport>,
    pub succeeded: usize,
    pub failed: usize,
    /// Per-operator timing over successful records; absent if none succeeded.
    pub structure: Option<Percentiles>,
    pub color: Option<Percentiles>,
}

impl BatchReport {
    pub fn all_ok(&self) -> bool {
        self.failed == 0
    }
}

/// Nearest-rank percentile of `sorted`, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn summarize(mut samples: Vec<f64>) -> Option<Percentiles> {
    if samples.is_empty() {
        return None;
    }
    samples.sort_by(f64::total_cmp);
    Some(Percentiles {
        p50_ms: percentile(&samples, 0.50),
        p95_ms: percentile(&samples, 0.95),
    })
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn process(record: &BatchRecord, id: &str, cfg: &BatchConfig) -> RecordStatus {
    let path = match (&cfg.input_root, record.image.is_relative()) {
        (Some(root), true) => root.join(&record.image),
        _ => record.image.clone(),
    };
    let seed = record_seed(cfg.seed, id);
    let result = imageio::read_rgb(&path)
        .map_err(|e| e.to_string())
        .and_then(|img| extract_bundle_timed(&img, &cfg.schedule, &cfg.slic, seed).map_err(|e| e.to_string()))
        .and_then(|(bundle, timings)| {
            let out = cfg.output_root.join(id);
            save_bundle(&bundle, &out).map_err(|e| e.to_string())?;
            Ok(RecordStatus::Ok {
                bundle: out,
                seed,
                k: bundle.provenance().structure.k.unwrap_or_default(),
                structure_ms: ms(timings.to_lab + timings.structure),
                color_ms: ms(timings.to_lab + timings.color),
            })
        });
    result.unwrap_or_else(|reason| RecordStatus::Failed { reason })
}

/// Extracts every record. Individual failures are reported, not returned;
/// `Err` means the run could not start.
pub fn run_batch(records: &[BatchRecord], cfg: &BatchConfig) -> Result<BatchReport, BatchError> {
    if cfg.workers == 0 {
        return Err(BatchError::Config("worker count must be at least 1".into()));
    }
    cfg.schedule.validate().map_err(|e| BatchError::Config(e.to_string()))?;
    cfg.slic.validate().map_err(|e| BatchError::Config(e.to_string()))?;

    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let ids: Vec<String> = records.iter().map(BatchRecord::output_id).collect();
    for (i, id) in ids.iter().enumerate() {
        if let Some(&first) = seen.get(id) {
            return Err(BatchError::DuplicateId {
                id: id.clone(),
                first,
                second: i,
            });
        }
        seen.insert(id.clone(), i);
    }
    std::fs::create_dir_all(&cfg.output_root).map_err(|e| BatchError::Io {
        path: cfg.output_root.display().to_string(),
        source: e,
    })?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<RecordStatus>>> = Mutex::new(vec![None; records.len()]);
    std::thread::scope(|s| {
        for _ in 0..cfg.workers.min(records.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= records.len() {
                    break;
                }
                let status = process(&records[i], &ids[i], cfg);
                results.lock().expect("worker panicked")[i] = Some(status);
            });
        }
    });

    let statuses = results.into_inner().expect("worker panicked");
    let mut report_records = Vec::with_capacity(records.len());
    let (mut struct_ms, mut color_ms) = (Vec::new(), Vec::new());
    for (i, status) in statuses.into_iter().enumerate() {
        let status = status.expect("every record is processed");
        if let RecordStatus::Ok {
            structure_ms,
            color_ms: c,
            ..
        } = &status
        {
            struct_ms.push(*structure_ms);
            color_ms.push(*c);
        }
        report_records.push(RecordReport {
            index: i,
            id: ids[i].clone(),
            image: records[i].image.clone(),
            status,
        });
    }
    let succeeded = struct_ms.len();
    Ok(BatchReport {
        failed: records.len() - succeeded,
        succeeded,
        records: report_records,
        structure: summarize(struct_ms),
        color: summarize(color_ms),
    })
}
