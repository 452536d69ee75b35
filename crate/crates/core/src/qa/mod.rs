//! Caption-to-benchmark data engine.
//!
//! Four stages turn timestamped captions into QA samples:
//! entity extraction (text LLM), visual grounding of each entity (LMM boxes
//! plus a presence check), per-subtask question generation from fixed
//! prompt templates, and automated validation that splits candidates into
//! the benchmark and a human review queue. Every stage reads and writes
//! JSON-lines files so it can be re-run on its own.

mod client;
mod engine;
mod prompts;
mod stages;
pub mod stub;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::frames::FrameError;
use crate::interval::{IntervalSet, TimeInterval};
use crate::types::{BBox, Subtask};

pub use client::{request_key, ModelClient, ModelRequest, Recording, RecordingClient, ReplayClient, VlmModelClient};
pub use engine::{
    load_captions, read_jsonl, write_jsonl, QaEngine, Stage, StageReport, ARTIFACTS, BENCHMARK, CANDIDATES, ENTITIES,
    GROUNDED, REVIEW_QUEUE,
};
pub use prompts::{fill, template_for, tojson, PromptTemplate, EXTRACT_ENTITIES, GROUND_BBOX, VERIFY_PRESENCE};
pub use stages::{
    extract_entities, generate_qa, ground_entity, token_overlap, validate_and_package, EngineConfig, Package,
    ReviewItem, ReviewStatus,
};

#[derive(Debug, Error)]
pub enum QaError {
    #[error("model unavailable: {0}")]
    Unavailable(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Frames(#[from] FrameError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub start: f64,
    pub end: f64,
    pub text: String,
}

impl Caption {
    pub fn span(&self) -> TimeInterval {
        TimeInterval::of(self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionTrack {
    pub video_id: String,
    pub captions: Vec<Caption>,
}

impl CaptionTrack {
    pub fn validate(&self) -> Result<(), QaError> {
        let bad = |m: String| Err(QaError::InvalidInput(format!("captions of {}: {m}", self.video_id)));
        for (i, c) in self.captions.iter().enumerate() {
            if TimeInterval::new(c.start, c.end).is_err() {
                return bad(format!("caption {i} has an invalid span"));
            }
            if c.text.trim().is_empty() {
                return bad(format!("caption {i} is empty"));
            }
        }
        if self.captions.windows(2).any(|w| w[0].start > w[1].start) {
            return bad("captions are not sorted by start".into());
        }
        Ok(())
    }

    /// Union of all caption spans.
    pub fn cover(&self) -> IntervalSet {
        self.captions.iter().map(Caption::span).collect()
    }

    pub fn end(&self) -> f64 {
        self.captions.iter().map(|c| c.end).fold(0.0, f64::max)
    }
}

/// A crop that passed the presence check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRef {
    /// Relative to the engine's work directory.
    pub path: String,
    pub sha256: String,
    pub frame_index: u64,
    pub timestamp: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonEntity {
    pub entity_id: String,
    pub video_id: String,
    pub reference: String,
    pub mentions: IntervalSet,
    #[serde(default)]
    pub query_crops: Vec<CropRef>,
    /// False once grounding found no verified crop.
    #[serde(default = "yes")]
    pub usable: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub prompt_id: String,
    pub model_id: String,
    pub response_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateQa {
    /// Hash of the content fields; stable across re-runs.
    pub candidate_id: String,
    pub video_id: String,
    pub subtask: Subtask,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_indirect: Option<String>,
    pub answer: String,
    #[serde(default)]
    pub distractors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<String>,
    pub timestamps: IntervalSet,
    pub provenance: Provenance,
}

impl CandidateQa {
    pub(crate) fn content_id(&self) -> String {
        let content = serde_json::json!({
            "video_id": self.video_id,
            "subtask": self.subtask,
            "question": self.question,
            "question_indirect": self.question_indirect,
            "answer": self.answer,
            "distractors": self.distractors,
            "person": self.person,
            "entity_id": self.entity_id,
            "timestamps": self.timestamps,
        });
        hex(&Sha256::digest(content.to_string().as_bytes()))[..16].to_string()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// The JSON value in a model reply: the whole text, a fenced block, or the
/// outermost bracketed span.
pub(crate) fn reply_json(raw: &str) -> Option<Value> {
    let t = raw.trim();
    if let Ok(v) = serde_json::from_str(t) {
        return Some(v);
    }
    if let Some(start) = t.find("```") {
        let body = &t[start + 3..];
        let body = body.strip_prefix("json").unwrap_or(body);
        if let Some(end) = body.find("```") {
            if let Ok(v) = serde_json::from_str(body[..end].trim()) {
                return Some(v);
            }
        }
    }
    for (open, close) in [('[', ']'), ('{', '}')] {
        if let (Some(a), Some(b)) = (t.find(open), t.rfind(close)) {
            if a < b {
                if let Ok(v) = serde_json::from_str(&t[a..=b]) {
                    return Some(v);
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_json_variants() {
        assert_eq!(reply_json("[1, 2]"), Some(serde_json::json!([1, 2])));
        assert_eq!(reply_json("Here:\n```json\n[{\"a\": 1}]\n```"), Some(serde_json::json!([{"a": 1}])));
        assert_eq!(reply_json("sure [3] ok"), Some(serde_json::json!([3])));
        assert_eq!(reply_json("no json here"), None);
    }

    #[test]
    fn caption_validation() {
        let mut t = CaptionTrack {
            video_id: "v".into(),
            captions: vec![
                Caption {
                    start: 0.0,
                    end: 5.0,
                    text: "a".into(),
                },
                Caption {
                    start: 3.0,
                    end: 4.0,
                    text: "b".into(),
                },
            ],
        };
        assert!(t.validate().is_ok());
        t.captions.swap(0, 1);
        assert!(t.validate().is_err());
        t.captions.swap(0, 1);
        t.captions[1].text = " ".into();
        assert!(t.validate().is_err());
    }
}
