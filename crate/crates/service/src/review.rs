//! Human review of held-back benchmark samples. Concurrent decisions on the
//! same item resolve last-writer-wins; every decision lands in the audit log.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use foresearch_core::qa::{read_jsonl, write_jsonl, QaError, ReviewItem, ReviewStatus, BENCHMARK, REVIEW_QUEUE};
use foresearch_core::QaSample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const AUDIT_LOG: &str = "review_audit.jsonl";

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("no review item `{0}`")]
    NotFound(String),
    #[error("invalid sample: {0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] QaError),
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Accept,
    Reject,
    Edit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub at: f64,
    pub item_id: String,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub previous_status: ReviewStatus,
}

pub struct ReviewStore {
    dir: PathBuf,
    lock: Mutex<()>,
}

impl ReviewStore {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            lock: Mutex::new(()),
        }
    }

    fn queue_path(&self) -> PathBuf {
        self.dir.join(REVIEW_QUEUE)
    }

    pub fn list(&self) -> Result<Vec<ReviewItem>, ReviewError> {
        let _g = self.lock.lock().expect("review lock");
        self.read_queue()
    }

    fn read_queue(&self) -> Result<Vec<ReviewItem>, ReviewError> {
        if !self.queue_path().exists() {
            return Ok(Vec::new());
        }
        Ok(read_jsonl(&self.queue_path())?)
    }

    fn audit(&self, entry: &AuditEntry) -> Result<(), ReviewError> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join(AUDIT_LOG))?;
        let mut line = serde_json::to_vec(entry).expect("audit entry serializes");
        line.push(b'\n');
        f.write_all(&line)?;
        Ok(())
    }

    pub fn audit_log(&self) -> Result<Vec<AuditEntry>, ReviewError> {
        let p = self.dir.join(AUDIT_LOG);
        if !p.exists() {
            return Ok(Vec::new());
        }
        Ok(read_jsonl(&p)?)
    }

    fn decide(
        &self,
        item_id: &str,
        action: Action,
        reviewer: Option<String>,
        reason: Option<String>,
        apply: impl FnOnce(&mut ReviewItem) -> Result<(), ReviewError>,
    ) -> Result<ReviewItem, ReviewError> {
        let _g = self.lock.lock().expect("review lock");
        let mut queue = self.read_queue()?;
        let item = queue
            .iter_mut()
            .find(|i| i.item_id == item_id)
            .ok_or_else(|| ReviewError::NotFound(item_id.to_string()))?;
        let previous_status = item.status;
        apply(item)?;
        let out = item.clone();

        let bench = self.dir.join(BENCHMARK);
        let mut samples: Vec<QaSample> = if bench.exists() { read_jsonl(&bench)? } else { Vec::new() };
        let before = samples.len();
        samples.retain(|s| s.sample_id != out.sample.sample_id);
        if out.status == ReviewStatus::Accepted {
            samples.push(out.sample.clone());
        }
        if samples.len() != before || out.status == ReviewStatus::Accepted {
            write_jsonl(&bench, &samples)?;
        }
        write_jsonl(&self.queue_path(), &queue)?;
        self.audit(&AuditEntry {
            at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()),
            item_id: item_id.to_string(),
            action,
            reviewer,
            reason,
            previous_status,
        })?;
        Ok(out)
    }

    /// Marks the item accepted and adds its sample to the benchmark file.
    pub fn accept(&self, item_id: &str, reviewer: Option<String>) -> Result<ReviewItem, ReviewError> {
        self.decide(item_id, Action::Accept, reviewer, None, |i| {
            i.sample.validate().map_err(|e| ReviewError::Invalid(e.to_string()))?;
            i.status = ReviewStatus::Accepted;
            Ok(())
        })
    }

    /// Marks the item rejected; a previously accepted sample leaves the
    /// benchmark.
    pub fn reject(&self, item_id: &str, reviewer: Option<String>, reason: String) -> Result<ReviewItem, ReviewError> {
        self.decide(item_id, Action::Reject, reviewer, Some(reason), |i| {
            i.status = ReviewStatus::Rejected;
            Ok(())
        })
    }

    /// Replaces the sample and puts the item back to pending.
    pub fn edit(&self, item_id: &str, reviewer: Option<String>, sample: QaSample) -> Result<ReviewItem, ReviewError> {
        sample.validate().map_err(|e| ReviewError::Invalid(e.to_string()))?;
        self.decide(item_id, Action::Edit, reviewer, None, |i| {
            if sample.sample_id != i.sample.sample_id {
                return Err(ReviewError::Invalid("edits must keep the sample id".into()));
            }
            i.sample = sample;
            i.status = ReviewStatus::Pending;
            Ok(())
        })
    }
}
