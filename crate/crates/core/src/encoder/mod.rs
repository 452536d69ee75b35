//! Client side of the multimodal encoder: frame-budget sampling, the wire
//! request, and a gateway that bounds concurrency, retries transient
//! failures and L2-normalizes every vector it hands out.

pub mod mock;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::frames::{self, FrameError, FrameSource};
use crate::types::{BBox, Clip, ClipMode, EmbeddingRecord, Modality, Query, ValidationError};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("encoder unavailable: {0}")]
    Unavailable(String),
    #[error("encoder returned {got} dimensions, profile expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid query: {0}")]
    InvalidQuery(#[from] ValidationError),
    #[error("invalid encode request: {0}")]
    InvalidRequest(String),
    #[error("frames unavailable: {0}")]
    Frames(#[from] FrameError),
    #[error("encoder returned a zero or non-finite vector")]
    DegenerateVector,
}

impl EncoderError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, EncoderError::Unavailable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderProfile {
    pub endpoint: String,
    pub dimension: usize,
    /// Frames per clip whose tokens add up to one single-image input.
    pub frame_budget: usize,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
}

impl Default for EncoderProfile {
    fn default() -> Self {
        Self {
            endpoint: "mock://".into(),
            dimension: 512,
            frame_budget: 8,
            timeout_ms: 30_000,
            max_in_flight: 4,
        }
    }
}

impl EncoderProfile {
    pub fn validate(&self) -> Result<(), String> {
        if self.dimension < 8 {
            return Err("encoder dimension must be at least 8".into());
        }
        if self.frame_budget < 1 || self.max_in_flight < 1 {
            return Err("frame_budget and max_in_flight must be positive".into());
        }
        Ok(())
    }
}

/// Uniform frame selection. Short clips keep every frame; longer ones take
/// the midpoint of each of `budget` equal bins.
pub fn sample_frames(frame_count: usize, budget: usize) -> Vec<usize> {
    if frame_count <= budget {
        return (0..frame_count).collect();
    }
    (0..budget)
        .map(|i| ((2 * i + 1) * frame_count) / (2 * budget))
        .collect()
}

/// Raw image bytes carried as base64 on the wire.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBytes(pub Vec<u8>);

impl std::fmt::Debug for ImageBytes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ImageBytes({})", self.0.len())
    }
}

impl Serialize for ImageBytes {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for ImageBytes {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        B64.decode(s).map(ImageBytes).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodeKind {
    Clip,
    TextQuery,
    ImageTextQuery,
}

/// Body of `POST {endpoint}/encode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub kind: EncodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<ImageBytes>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Source-frame boxes the frames were cropped to, aligned with `frames`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_boxes: Option<Vec<BBox>>,
}

impl EncodeRequest {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidRequest(m.to_string()));
        let nframes = self.frames.as_ref().map_or(0, Vec::len);
        let has_text = self.text.as_deref().is_some_and(|t| !t.trim().is_empty());
        match self.kind {
            EncodeKind::Clip if nframes == 0 || self.text.is_some() => bad("clip requests carry frames and no text"),
            EncodeKind::TextQuery if nframes != 0 || !has_text => bad("text queries carry text only"),
            EncodeKind::ImageTextQuery if nframes != 1 || !has_text => bad("image-text queries carry one image and text"),
            _ => {
                if let Some(b) = &self.crop_boxes {
                    if b.len() != nframes {
                        return bad("crop_boxes must align with frames");
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub vector: Vec<f32>,
}

/// Anything that turns an encode request into a raw vector.
pub trait EncoderBackend: Send + Sync {
    fn encode(&self, request: &EncodeRequest) -> Result<Vec<f32>, EncoderError>;
}

impl<T: EncoderBackend + ?Sized> EncoderBackend for Arc<T> {
    fn encode(&self, request: &EncodeRequest) -> Result<Vec<f32>, EncoderError> {
        (**self).encode(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(100),
        }
    }
}

impl RetryPolicy {
    /// Runs `op` until it succeeds, fails fatally, or attempts run out.
    /// Waits `base_delay · 2^k` after the k-th retriable failure.
    pub fn run<T, E>(&self, mut op: impl FnMut() -> Result<T, E>, retriable: impl Fn(&E) -> bool) -> Result<T, E> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if retriable(&e) && attempt + 1 < self.attempts => {
                    std::thread::sleep(self.base_delay * 2u32.pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Counting semaphore that also records the peak number of holders.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    state: Mutex<(usize, usize)>,
    cv: Condvar,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            state: Mutex::new((0, 0)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut st = self.state.lock().expect("limiter poisoned");
        while st.0 >= self.max {
            st = self.cv.wait(st).expect("limiter poisoned");
        }
        st.0 += 1;
        st.1 = st.1.max(st.0);
        InFlightGuard { limit: self }
    }

    pub fn peak(&self) -> usize {
        self.state.lock().expect("limiter poisoned").1
    }
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut st = self.limit.state.lock().expect("limiter poisoned");
        st.0 -= 1;
        self.limit.cv.notify_one();
    }
}

/// Returns `(unit vector, original norm)`.
pub fn l2_normalize(mut v: Vec<f32>) -> Result<(Vec<f32>, f32), EncoderError> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(EncoderError::DegenerateVector);
    }
    for x in &mut v {
        *x = (*x as f64 / norm) as f32;
    }
    Ok((v, norm as f32))
}

/// Shared entry point for clip and query embedding.
pub struct EncoderGateway {
    backend: Arc<dyn EncoderBackend>,
    profile: EncoderProfile,
    limit: InFlightLimit,
    retry: RetryPolicy,
}

impl EncoderGateway {
    pub fn new(backend: Arc<dyn EncoderBackend>, profile: EncoderProfile) -> Self {
        let limit = InFlightLimit::new(profile.max_in_flight);
        Self {
            backend,
            profile,
            limit,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn profile(&self) -> &EncoderProfile {
        &self.profile
    }

    pub fn peak_in_flight(&self) -> usize {
        self.limit.peak()
    }

    /// Sends one request through the limiter and retry loop, checks the
    /// dimension and normalizes.
    pub fn encode(&self, request: &EncodeRequest) -> Result<(Vec<f32>, f32), EncoderError> {
        request.validate()?;
        let raw = self.retry.run(
            || {
                let _slot = self.limit.acquire();
                self.backend.encode(request)
            },
            EncoderError::is_retriable,
        )?;
        if raw.len() != self.profile.dimension {
            return Err(EncoderError::DimensionMismatch {
                expected: self.profile.dimension,
                got: raw.len(),
            });
        }
        l2_normalize(raw)
    }

    /// Builds the encode request for a clip: budget-sampled frames, cropped
    /// to the per-frame box for person-centric clips.
    pub fn clip_request(&self, clip: &Clip, source: &dyn FrameSource) -> Result<EncodeRequest, EncoderError> {
        if clip.frames.is_empty() {
            return Err(EncoderError::InvalidRequest(format!("clip {} has no frames", clip.clip_id)));
        }
        let picks = sample_frames(clip.frames.len(), self.profile.frame_budget);
        let mut frames_out = Vec::with_capacity(picks.len());
        let mut boxes = Vec::new();
        for i in picks {
            let idx = clip.frames[i];
            let frame = source.frame(&clip.video_id, idx)?;
            match (clip.mode, clip.box_at(idx)) {
                (ClipMode::PersonCentric, Some(b)) => {
                    frames_out.push(ImageBytes(frames::crop(&frame, b)?.data));
                    boxes.push(*b);
                }
                _ => frames_out.push(ImageBytes(frame.data)),
            }
        }
        let crop_boxes = (!boxes.is_empty() && boxes.len() == frames_out.len()).then_some(boxes);
        Ok(EncodeRequest {
            kind: EncodeKind::Clip,
            frames: Some(frames_out),
            text: None,
            crop_boxes,
        })
    }

    pub fn embed_clip(&self, clip: &Clip, source: &dyn FrameSource) -> Result<EmbeddingRecord, EncoderError> {
        let request = self.clip_request(clip, source)?;
        let (vector, norm) = self.encode(&request)?;
        Ok(EmbeddingRecord {
            clip_id: clip.clip_id.clone(),
            vector,
            norm,
        })
    }

    pub fn query_request(query: &Query) -> Result<EncodeRequest, EncoderError> {
        query.validate()?;
        Ok(match (query.modality, &query.image) {
            (Modality::ImageText, Some(img)) => EncodeRequest {
                kind: EncodeKind::ImageTextQuery,
                frames: Some(vec![ImageBytes(frames::load_image(img)?)]),
                text: Some(query.text.clone()),
                crop_boxes: None,
            },
            _ => EncodeRequest {
                kind: EncodeKind::TextQuery,
                frames: None,
                text: Some(query.text.clone()),
                crop_boxes: None,
            },
        })
    }

    pub fn embed_query(&self, query: &Query) -> Result<Vec<f32>, EncoderError> {
        let request = Self::query_request(query)?;
        self.encode(&request).map(|(v, _)| v)
    }
}
