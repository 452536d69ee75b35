//! Asynchronous jobs and their JSON-lines journal. Every state change is
//! appended as a full job snapshot; on start the last snapshot per id wins.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Ingest,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Retrying,
    Completed,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Completed | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    /// Last stage reached, for ingestion: tracking, embedding, indexing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    pub attempts: u32,
    pub created_at: f64,
    pub updated_at: f64,
    /// The request that started the job; enough to run it again.
    pub input: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub struct JobStore {
    jobs: Mutex<BTreeMap<String, Job>>,
    journal: Option<Mutex<File>>,
    next: Mutex<u64>,
}

impl JobStore {
    pub fn in_memory() -> Self {
        Self {
            jobs: Mutex::default(),
            journal: None,
            next: Mutex::new(1),
        }
    }

    /// Replays the journal (a torn last line is ignored) and keeps
    /// appending to it.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut jobs = BTreeMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if let Ok(j) = serde_json::from_str::<Job>(&line) {
                    jobs.insert(j.id.clone(), j);
                }
            }
        }
        let next = jobs
            .keys()
            .filter_map(|id: &String| id.strip_prefix("job-")?.parse::<u64>().ok())
            .max()
            .map_or(1, |n| n + 1);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            jobs: Mutex::new(jobs),
            journal: Some(Mutex::new(file)),
            next: Mutex::new(next),
        })
    }

    fn record(&self, job: &Job) {
        if let Some(f) = &self.journal {
            let mut line = serde_json::to_vec(job).expect("job serializes");
            line.push(b'\n');
            let mut f = f.lock().expect("journal lock");
            if let Err(e) = f.write_all(&line).and_then(|_| f.sync_data()) {
                tracing::error!(job = %job.id, error = %e, "journal write failed");
            }
        }
    }

    pub fn create(&self, kind: JobKind, input: Value) -> Job {
        let id = {
            let mut n = self.next.lock().expect("id lock");
            let id = format!("job-{:06}", *n);
            *n += 1;
            id
        };
        let t = now();
        let job = Job {
            id: id.clone(),
            kind,
            status: JobStatus::Queued,
            stage: None,
            attempts: 0,
            created_at: t,
            updated_at: t,
            input,
            result: None,
            error: None,
        };
        self.jobs.lock().expect("jobs lock").insert(id, job.clone());
        self.record(&job);
        job
    }

    pub fn get(&self, id: &str) -> Option<Job> {
        self.jobs.lock().expect("jobs lock").get(id).cloned()
    }

    pub fn list(&self) -> Vec<Job> {
        self.jobs.lock().expect("jobs lock").values().cloned().collect()
    }

    pub fn is_active(&self, id: &str) -> bool {
        self.get(id).is_some_and(|j| !j.status.is_terminal())
    }

    /// Applies `f` and journals the result.
    pub fn update(&self, id: &str, f: impl FnOnce(&mut Job)) -> Option<Job> {
        let snapshot = {
            let mut jobs = self.jobs.lock().expect("jobs lock");
            let j = jobs.get_mut(id)?;
            f(j);
            j.updated_at = now();
            j.clone()
        };
        self.record(&snapshot);
        Some(snapshot)
    }

    pub fn set_status(&self, id: &str, status: JobStatus) {
        self.update(id, |j| j.status = status);
    }

    pub fn set_stage(&self, id: &str, stage: &str) {
        self.update(id, |j| j.stage = Some(stage.to_string()));
    }

    pub fn complete(&self, id: &str, result: Value) {
        self.update(id, |j| {
            j.status = JobStatus::Completed;
            j.result = Some(result);
            j.error = None;
        });
    }

    pub fn fail(&self, id: &str, error: String) {
        self.update(id, |j| {
            j.status = JobStatus::Failed;
            j.error = Some(error);
        });
    }

    /// Jobs a restart should pick up again.
    pub fn unfinished(&self) -> Vec<Job> {
        self.list().into_iter().filter(|j| !j.status.is_terminal()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn journal_replays_last_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("jobs.jsonl");
        let s = JobStore::open(&path).unwrap();
        let a = s.create(JobKind::Ingest, json!({"video": "a"}));
        let b = s.create(JobKind::Eval, json!({}));
        s.set_status(&a.id, JobStatus::Running);
        s.complete(&b.id, json!({"ok": true}));
        drop(s);
        // a torn write at the end must not poison the journal
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"id\": \"job-0").unwrap();

        let s = JobStore::open(&path).unwrap();
        assert_eq!(s.get(&a.id).unwrap().status, JobStatus::Running);
        assert_eq!(s.get(&b.id).unwrap().result, Some(json!({"ok": true})));
        let unfinished: Vec<String> = s.unfinished().into_iter().map(|j| j.id).collect();
        assert_eq!(unfinished, vec![a.id]);
        assert_eq!(s.create(JobKind::Eval, json!({})).id, "job-000003");
    }
}
