use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::stages::{extract_entities, generate_qa, ground_entity, validate_and_package, EngineConfig};
use super::{CandidateQa, CaptionTrack, CropRef, ModelClient, PersonEntity, QaError};
use crate::frames::FrameSource;
use crate::par;

pub const ENTITIES: &str = "entities.jsonl";
pub const GROUNDED: &str = "grounded_entities.jsonl";
pub const CANDIDATES: &str = "candidates.jsonl";
pub const REVIEW_QUEUE: &str = "review_queue.jsonl";
pub const BENCHMARK: &str = "benchmark.jsonl";

/// Files written under the work directory, in stage order.
pub const ARTIFACTS: [&str; 5] = [ENTITIES, GROUNDED, CANDIDATES, REVIEW_QUEUE, BENCHMARK];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Extract,
    Ground,
    Generate,
    Package,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Extract, Stage::Ground, Stage::Generate, Stage::Package];
}

impl std::str::FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "extract" => Ok(Stage::Extract),
            "ground" => Ok(Stage::Ground),
            "generate" => Ok(Stage::Generate),
            "package" => Ok(Stage::Package),
            _ => Err(format!("unknown stage `{s}` (extract, ground, generate, package)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    /// Records written to the stage's main output.
    pub written: usize,
    /// Samples routed to review (package stage only).
    pub review: usize,
    pub notes: Vec<String>,
}

/// File-backed runner for the four stages.
pub struct QaEngine {
    pub llm: Arc<dyn ModelClient>,
    pub lmm: Arc<dyn ModelClient>,
    pub frames: Arc<dyn FrameSource>,
    pub config: EngineConfig,
    pub work_dir: PathBuf,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> QaError + '_ {
    move |source| QaError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, QaError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| QaError::InvalidInput(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

/// Replaces `path` atomically with one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), QaError> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = std::io::BufWriter::new(fs::File::create(&tmp).map_err(io_err(&tmp))?);
        for it in items {
            serde_json::to_writer(&mut f, it).expect("record serializes");
            f.write_all(b"\n").map_err(io_err(&tmp))?;
        }
        f.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_captions(path: &Path) -> Result<Vec<CaptionTrack>, QaError> {
    let tracks: Vec<CaptionTrack> = read_jsonl(path)?;
    let mut ids = HashSet::new();
    for t in &tracks {
        t.validate()?;
        if !ids.insert(t.video_id.clone()) {
            return Err(QaError::InvalidInput(format!("captions for `{}` given twice", t.video_id)));
        }
    }
    Ok(tracks)
}

impl QaEngine {
    pub fn path(&self, name: &str) -> PathBuf {
        self.work_dir.join(name)
    }

    pub fn run_all(&self, tracks: &[CaptionTrack]) -> Result<Vec<StageReport>, QaError> {
        Stage::ALL.iter().map(|&s| self.run_stage(s, tracks)).collect()
    }

    pub fn run_stage(&self, stage: Stage, tracks: &[CaptionTrack]) -> Result<StageReport, QaError> {
        fs::create_dir_all(&self.work_dir).map_err(io_err(&self.work_dir))?;
        let mut report = StageReport {
            stage,
            written: 0,
            review: 0,
            notes: Vec::new(),
        };
        match stage {
            Stage::Extract => {
                let per_video = par::map(tracks, |t| extract_entities(t, self.llm.as_ref()));
                let mut all = Vec::new();
                for r in per_video {
                    let (es, notes) = r?;
                    all.extend(es);
                    report.notes.extend(notes);
                }
                report.written = all.len();
                write_jsonl(&self.path(ENTITIES), &all)?;
            }
            Stage::Ground => {
                let entities: Vec<PersonEntity> = read_jsonl(&self.path(ENTITIES))?;
                let n = self.config.frames_per_mention;
                let grounded = par::map(&entities, |e| {
                    ground_entity(e, self.frames.as_ref(), self.lmm.as_ref(), n, Some(&self.work_dir))
                });
                let mut all = Vec::new();
                for r in grounded {
                    let (e, notes) = r?;
                    all.push(e);
                    report.notes.extend(notes);
                }
                report.written = all.len();
                write_jsonl(&self.path(GROUNDED), &all)?;
            }
            Stage::Generate => {
                let entities: Vec<PersonEntity> = read_jsonl(&self.path(GROUNDED))?;
                let mut jobs = Vec::new();
                for t in tracks {
                    for &st in &self.config.subtasks {
                        if st.is_person_specific() {
                            for e in entities.iter().filter(|e| e.video_id == t.video_id) {
                                jobs.push((t, Some(e), st));
                            }
                        } else {
                            jobs.push((t, None, st));
                        }
                    }
                }
                let max = self.config.max_candidates;
                let results = par::map(&jobs, |(t, e, st)| generate_qa(t, *e, *st, self.llm.as_ref(), max));
                let mut all: Vec<CandidateQa> = Vec::new();
                let mut seen = HashSet::new();
                for r in results {
                    let (cs, notes) = r?;
                    report.notes.extend(notes);
                    all.extend(cs.into_iter().filter(|c| seen.insert(c.candidate_id.clone())));
                }
                report.written = all.len();
                write_jsonl(&self.path(CANDIDATES), &all)?;
            }
            Stage::Package => {
                let entities: Vec<PersonEntity> = read_jsonl(&self.path(GROUNDED))?;
                let candidates: Vec<CandidateQa> = read_jsonl(&self.path(CANDIDATES))?;
                let durations: BTreeMap<String, f64> = tracks
                    .iter()
                    .map(|t| {
                        let d = self.frames.manifest(&t.video_id).map_or(t.end(), |m| m.duration_seconds);
                        (t.video_id.clone(), d)
                    })
                    .collect();
                let load = |c: &CropRef| {
                    let p = self.work_dir.join(&c.path);
                    fs::read(&p).map_err(io_err(&p))
                };
                let pkg = validate_and_package(&candidates, &entities, &durations, &self.config, &load)?;
                report.notes = pkg.notes;
                report.written = pkg.benchmark.len();
                report.review = pkg.review.len();
                write_jsonl(&self.path(REVIEW_QUEUE), &pkg.review)?;
                write_jsonl(&self.path(BENCHMARK), &pkg.benchmark)?;
            }
        }
        Ok(report)
    }
}
