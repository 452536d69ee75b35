use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::report::{EvalReport, LatencySummary, RetrievalMatrix, SampleResult, SkipCounts};
use super::{score_sample, topk_at_iou_spans, EvalConfig, EvalError};
use crate::interval::TimeInterval;
use crate::par;
use crate::types::{Prediction, QaSample};
use crate::vecindex::SearchHit;

/// Wall-clock time spent per stage for one sample, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageLatency {
    pub retrieval_ms: f64,
    pub generation_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttft_ms: Option<f64>,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemOutput {
    pub prediction: Prediction,
    /// Ranked retrieval log (may be longer than what was shown to the VLM).
    pub hits: Vec<SearchHit>,
    pub latency: Option<StageLatency>,
    pub frames_sent: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("video `{0}` is not indexed")]
    MissingVideo(String),
    #[error("{0}")]
    Failed(String),
}

/// A live question-answering system under evaluation.
pub trait QaSystem: Send + Sync {
    fn answer(&self, sample: &QaSample) -> Result<SystemOutput, SystemError>;
}

pub enum PredictionSource<'a> {
    System(&'a dyn QaSystem),
    Predictions(&'a HashMap<String, Prediction>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadIssue {
    pub line: usize,
    pub message: String,
}

fn read_jsonl<T>(reader: impl BufRead, mut accept: impl FnMut(usize, &str) -> Result<T, String>) -> io::Result<(Vec<T>, Vec<LoadIssue>)> {
    let mut items = Vec::new();
    let mut issues = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match accept(n + 1, &line) {
            Ok(t) => items.push(t),
            Err(message) => issues.push(LoadIssue { line: n + 1, message }),
        }
    }
    Ok((items, issues))
}

/// Reads a QA file (JSON lines). Unparseable, invalid and duplicate
/// samples are returned as issues instead of failing the load.
pub fn load_samples(reader: impl BufRead) -> io::Result<(Vec<QaSample>, Vec<LoadIssue>)> {
    let mut seen = BTreeSet::new();
    read_jsonl(reader, |_, line| {
        let s: QaSample = serde_json::from_str(line).map_err(|e| e.to_string())?;
        s.validate().map_err(|e| e.to_string())?;
        if !seen.insert(s.sample_id.clone()) {
            return Err(format!("duplicate sample id `{}`", s.sample_id));
        }
        Ok(s)
    })
}

pub fn load_samples_file(path: &Path) -> io::Result<(Vec<QaSample>, Vec<LoadIssue>)> {
    load_samples(BufReader::new(File::open(path)?))
}

/// Reads a predictions file (JSON lines), keyed by sample id.
pub fn load_predictions(reader: impl BufRead) -> io::Result<(HashMap<String, Prediction>, Vec<LoadIssue>)> {
    let (items, issues) = read_jsonl(reader, |_, line| serde_json::from_str::<Prediction>(line).map_err(|e| e.to_string()))?;
    Ok((items.into_iter().map(|p| (p.sample_id.clone(), p)).collect(), issues))
}

enum Outcome {
    Scored {
        result: SampleResult,
        spans: Option<Vec<TimeInterval>>,
        latency: Option<StageLatency>,
    },
    MissingVideo,
}

fn unanswered(sample: &QaSample) -> Prediction {
    Prediction {
        sample_id: sample.sample_id.clone(),
        chosen_index: None,
        predicted_intervals: Default::default(),
        raw_response: String::new(),
    }
}

fn evaluate(sample: &QaSample, source: &PredictionSource<'_>) -> Result<Outcome, EvalError> {
    let (pred, spans, latency, frames_sent, note) = match source {
        PredictionSource::Predictions(map) => match map.get(&sample.sample_id) {
            Some(p) => (p.clone(), None, None, None, None),
            None => (unanswered(sample), None, None, None, Some("no prediction".to_string())),
        },
        PredictionSource::System(sys) => match sys.answer(sample) {
            Ok(out) => {
                let spans = out.hits.iter().map(|h| h.clip.span).collect();
                let note = (!out.warnings.is_empty()).then(|| out.warnings.join("; "));
                (out.prediction, Some(spans), out.latency, Some(out.frames_sent), note)
            }
            Err(SystemError::MissingVideo(_)) => return Ok(Outcome::MissingVideo),
            Err(SystemError::Failed(m)) => (unanswered(sample), None, None, None, Some(format!("failed: {m}"))),
        },
    };
    let (correct, tiou) = score_sample(sample, &pred)?;
    Ok(Outcome::Scored {
        result: SampleResult {
            sample_id: sample.sample_id.clone(),
            video_id: sample.video_id.clone(),
            subtask: sample.subtask,
            modality: sample.query.modality,
            is_negative: sample.is_negative,
            answer_index: sample.answer_index,
            chosen_index: pred.chosen_index,
            correct,
            tiou,
            frames_sent,
            note,
        },
        spans: spans.filter(|_| !sample.ground_truth.is_empty()),
        latency,
    })
}

/// Runs the protocol over `samples`. Samples are evaluated concurrently;
/// aggregation walks them in sample-id order so sums are reproducible.
/// `malformed` is the number of samples dropped while loading.
pub fn run_benchmark(samples: &[QaSample], source: PredictionSource<'_>, cfg: &EvalConfig, malformed: usize) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    let mut chosen: Vec<&QaSample> = samples.iter().filter(|s| cfg.includes(s.subtask)).collect();
    let filtered = samples.len() - chosen.len();
    chosen.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let outcomes = par::map(&chosen, |s| evaluate(s, &source));

    let mut results = Vec::with_capacity(chosen.len());
    let mut skipped = SkipCounts {
        malformed,
        filtered,
        ..Default::default()
    };
    let mut matrix_hits = vec![vec![0usize; cfg.ks.len()]; cfg.thresholds.len()];
    let mut retrieval_samples = 0usize;
    let mut latencies = Vec::new();
    for (sample, outcome) in chosen.iter().zip(outcomes) {
        match outcome? {
            Outcome::MissingVideo => skipped.missing_video += 1,
            Outcome::Scored { result, spans, latency } => {
                if result.note.as_deref().is_some_and(|n| n.starts_with("failed")) {
                    skipped.failed += 1;
                }
                if let Some(spans) = spans {
                    retrieval_samples += 1;
                    for (ti, &tau) in cfg.thresholds.iter().enumerate() {
                        for (ki, &k) in cfg.ks.iter().enumerate() {
                            if topk_at_iou_spans(&spans, &sample.ground_truth, k, tau) {
                                matrix_hits[ti][ki] += 1;
                            }
                        }
                    }
                }
                if let Some(l) = latency {
                    latencies.push((l, result.frames_sent.unwrap_or(0)));
                }
                results.push(result);
            }
        }
    }

    let retrieval = matches!(source, PredictionSource::System(_)).then(|| RetrievalMatrix {
        thresholds: cfg.thresholds.clone(),
        ks: cfg.ks.clone(),
        samples: retrieval_samples,
        values: matrix_hits
            .iter()
            .map(|row| row.iter().map(|&h| pct(h as f64, retrieval_samples)).collect())
            .collect(),
    });
    let latency = (!latencies.is_empty()).then(|| LatencySummary::from_samples(&latencies));
    Ok(EvalReport::aggregate(cfg.clone(), results, retrieval, latency, skipped))
}

pub(crate) fn pct(x: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * x / n as f64
    }
}
