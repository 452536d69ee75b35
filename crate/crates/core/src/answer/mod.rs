//! Answer orchestration: turn retrieved clips into a VLM request under a
//! grounding mode, call the backend, parse the grounded answer.

mod assemble;
pub mod mock;
mod parse;
mod pipeline;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderError, ImageBytes, RetryPolicy};
use crate::interval::IntervalSet;

pub use assemble::{assemble, coords_line};
pub use parse::{parse_response, parse_response_with_options, ParsedAnswer};
pub use pipeline::{RagOutput, RagPipeline};

/// Versioned system prompt shipped with the crate.
pub const SYSTEM_PROMPT_V1: &str = include_str!("../../assets/prompts/answer_system_v1.txt");

#[derive(Debug, Error)]
pub enum AnswerError {
    #[error("invalid grounding mode: {0}")]
    InvalidMode(String),
    #[error("frames of clip `{clip_id}` unavailable: {reason}")]
    MissingFrames { clip_id: String, reason: String },
    #[error("invalid query: {0}")]
    Query(String),
    #[error("VLM unavailable: {0}")]
    VlmUnavailable(String),
    #[error("retrieval failed: {0}")]
    Retrieval(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

impl AnswerError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, AnswerError::VlmUnavailable(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameOrder {
    /// Clips in retrieval-rank order, frames ascending within a clip.
    #[default]
    Rank,
    /// All frames sorted by timestamp.
    Chronological,
}

/// How retrieved box information reaches the VLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundingMode {
    pub crop: bool,
    pub overlay: bool,
    pub coords: bool,
    pub top_k: usize,
    pub frames_per_clip: usize,
    pub extra_uniform_frames: usize,
    pub order: FrameOrder,
}

impl Default for GroundingMode {
    fn default() -> Self {
        Self {
            crop: false,
            overlay: false,
            coords: true,
            top_k: 3,
            frames_per_clip: 8,
            extra_uniform_frames: 0,
            order: FrameOrder::Rank,
        }
    }
}

impl GroundingMode {
    pub fn validate(&self) -> Result<(), AnswerError> {
        if self.crop && self.overlay {
            return Err(AnswerError::InvalidMode("crop and overlay are mutually exclusive".into()));
        }
        if self.top_k == 0 || self.frames_per_clip == 0 {
            return Err(AnswerError::InvalidMode("top_k and frames_per_clip must be positive".into()));
        }
        Ok(())
    }

    /// Upper bound on frames in one request.
    pub fn max_frames(&self) -> usize {
        self.top_k * self.frames_per_clip + self.extra_uniform_frames
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedFrame {
    /// Absolute video time in seconds.
    pub timestamp: f64,
    pub image: ImageBytes,
    /// Originating clip; `None` for uniformly sampled context frames.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmRequest {
    pub system_prompt: String,
    pub user_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_image: Option<ImageBytes>,
    pub frames: Vec<TimedFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    /// Answer options shown to the model, kept for option-text matching.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub image: ImageBytes,
    pub timestamp: f64,
}

/// Body of `POST {endpoint}/generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub system: String,
    pub text: String,
    pub images: Vec<WireImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_image: Option<ImageBytes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub text: String,
}

impl VlmRequest {
    pub fn to_wire(&self) -> WireRequest {
        WireRequest {
            system: self.system_prompt.clone(),
            text: self.user_text.clone(),
            images: self
                .frames
                .iter()
                .map(|f| WireImage {
                    image: f.image.clone(),
                    timestamp: f.timestamp,
                })
                .collect(),
            query_image: self.query_image.clone(),
            sample_id: self.sample_id.clone(),
        }
    }

    pub fn from_wire(w: WireRequest) -> Self {
        VlmRequest {
            system_prompt: w.system,
            user_text: w.text,
            query_image: w.query_image,
            frames: w
                .images
                .into_iter()
                .map(|i| TimedFrame {
                    timestamp: i.timestamp,
                    image: i.image,
                    clip_id: None,
                })
                .collect(),
            sample_id: w.sample_id,
            options: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VlmReply {
    pub text: String,
    /// Time to first token, when the backend reports it.
    pub ttft: Option<Duration>,
}

pub trait VlmBackend: Send + Sync {
    fn generate(&self, request: &VlmRequest) -> Result<VlmReply, AnswerError>;
}

impl<T: VlmBackend + ?Sized> VlmBackend for std::sync::Arc<T> {
    fn generate(&self, request: &VlmRequest) -> Result<VlmReply, AnswerError> {
        (**self).generate(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmResponse {
    pub raw: String,
    pub chosen_index: Option<usize>,
    pub intervals: IntervalSet,
    pub summary: Option<String>,
    /// False when neither the JSON path nor the fallback found anything.
    pub parsed: bool,
    pub ttft_ms: Option<f64>,
    pub generation_ms: f64,
}

/// Calls the backend (retrying transient failures) and parses the reply.
pub fn answer(request: &VlmRequest, backend: &dyn VlmBackend, retry: &RetryPolicy) -> Result<VlmResponse, AnswerError> {
    let start = Instant::now();
    let reply = retry.run(|| backend.generate(request), AnswerError::is_retriable)?;
    let generation_ms = start.elapsed().as_secs_f64() * 1e3;
    let options = (!request.options.is_empty()).then_some(request.options.as_slice());
    let p = parse_response_with_options(&reply.text, options);
    Ok(VlmResponse {
        parsed: p.chosen_index.is_some() || !p.intervals.is_empty() || p.structured,
        raw: reply.text,
        chosen_index: p.chosen_index,
        intervals: p.intervals,
        summary: p.summary,
        ttft_ms: reply.ttft.map(|d| d.as_secs_f64() * 1e3),
        generation_ms,
    })
}
