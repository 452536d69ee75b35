//! Domain records shared by every stage: detections, tracks, clips,
//! embeddings, queries and benchmark samples.
//!
//! Field names double as the canonical JSON encoding.

use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::interval::{IntervalSet, TimeInterval};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("bounding box must have positive size and non-negative origin (got {0:?})")]
    BadBox([f64; 4]),
    #[error("query text must not be empty")]
    EmptyQueryText,
    #[error("query modality {modality:?} does not match image presence")]
    ModalityMismatch { modality: Modality },
    #[error("sample {id}: {reason}")]
    Sample { id: String, reason: String },
    #[error("track {0} has no observations")]
    EmptyTrack(u64),
    #[error("track {0} observations are not strictly increasing by frame")]
    UnorderedTrack(u64),
}

/// Axis-aligned pixel box, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Deserialize)]
struct RawBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl TryFrom<RawBox> for BBox {
    type Error = ValidationError;
    fn try_from(r: RawBox) -> Result<Self, Self::Error> {
        BBox::new(r.x, r.y, r.w, r.h)
    }
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, ValidationError> {
        let ok = [x, y, w, h].iter().all(|v| v.is_finite()) && x >= 0.0 && y >= 0.0 && w > 0.0 && h > 0.0;
        if ok {
            Ok(Self { x, y, w, h })
        } else {
            Err(ValidationError::BadBox([x, y, w, h]))
        }
    }

    #[track_caller]
    pub fn of(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x, y, w, h).expect("valid box literal")
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Integer pixel rectangle `(x, y, w, h)` clipped to a `width × height`
    /// canvas; `None` when nothing is left.
    pub fn pixel_rect(&self, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
        let x0 = self.x.floor().max(0.0) as u32;
        let y0 = self.y.floor().max(0.0) as u32;
        let x1 = (self.right().ceil() as u32).min(width);
        let y1 = (self.bottom().ceil() as u32).min(height);
        (x1 > x0 && y1 > y0).then(|| (x0, y0, x1 - x0, y1 - y0))
    }
}

/// One detector output for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video_id: String,
    pub frame_index: u64,
    pub timestamp: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
    pub class_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame_index: u64,
    pub timestamp: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// A single identity followed through one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u64,
    pub video_id: String,
    pub observations: Vec<Observation>,
}

impl Track {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.observations.is_empty() {
            return Err(ValidationError::EmptyTrack(self.track_id));
        }
        if self.observations.windows(2).any(|w| w[0].frame_index >= w[1].frame_index) {
            return Err(ValidationError::UnorderedTrack(self.track_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    PersonCentric,
    FullFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameBox {
    pub frame_index: u64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// The indexing unit: a span of one video, either following one person
/// (with per-frame boxes) or covering the full frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub clip_id: String,
    pub camera_id: String,
    pub video_id: String,
    pub span: TimeInterval,
    pub boxes: Vec<FrameBox>,
    pub mode: ClipMode,
    pub frame_count: u32,
    /// Source frame indices making up the clip, ascending.
    pub frames: Vec<u64>,
}

impl Clip {
    pub fn box_at(&self, frame_index: u64) -> Option<&BBox> {
        self.boxes
            .binary_search_by_key(&frame_index, |fb| fb.frame_index)
            .ok()
            .map(|i| &self.boxes[i].bbox)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.frame_count == 0 || self.frames.len() != self.frame_count as usize {
            return Err(format!("clip {}: frame_count does not match frames", self.clip_id));
        }
        match self.mode {
            ClipMode::PersonCentric if self.boxes.is_empty() => {
                Err(format!("clip {}: person-centric clip without boxes", self.clip_id))
            }
            ClipMode::FullFrame if !self.boxes.is_empty() => {
                Err(format!("clip {}: full-frame clip carries boxes", self.clip_id))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub clip_id: String,
    pub vector: Vec<f32>,
    /// L2 norm of the vector as returned by the encoder, before normalization.
    pub norm: f32,
}

/// Image payload carried by queries and requests.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum ImageRef {
    Uri(String),
    Bytes(Vec<u8>),
}

impl fmt::Debug for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageRef::Uri(u) => f.debug_tuple("Uri").field(u).finish(),
            ImageRef::Bytes(b) => write!(f, "Bytes({} bytes)", b.len()),
        }
    }
}

impl Serialize for ImageRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(1))?;
        match self {
            ImageRef::Uri(u) => m.serialize_entry("uri", u)?,
            ImageRef::Bytes(b) => m.serialize_entry("base64", &B64.encode(b))?,
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for ImageRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            uri: Option<String>,
            base64: Option<String>,
        }
        match Raw::deserialize(d)? {
            Raw { uri: Some(u), base64: None } => Ok(ImageRef::Uri(u)),
            Raw { uri: None, base64: Some(b) } => B64.decode(b).map(ImageRef::Bytes).map_err(D::Error::custom),
            _ => Err(D::Error::custom("image reference needs exactly one of `uri` or `base64`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    TextOnly,
    ImageText,
}

/// Search input: text plus an optional reference image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawQuery")]
pub struct Query {
    pub text: String,
    pub image: Option<ImageRef>,
    pub modality: Modality,
}

#[derive(Deserialize)]
struct RawQuery {
    text: String,
    #[serde(default)]
    image: Option<ImageRef>,
    modality: Option<Modality>,
}

impl TryFrom<RawQuery> for Query {
    type Error = ValidationError;
    fn try_from(r: RawQuery) -> Result<Self, Self::Error> {
        let q = Query {
            modality: r.modality.unwrap_or(if r.image.is_some() {
                Modality::ImageText
            } else {
                Modality::TextOnly
            }),
            text: r.text,
            image: r.image,
        };
        q.validate()?;
        Ok(q)
    }
}

impl Query {
    pub fn text(text: impl Into<String>) -> Result<Self, ValidationError> {
        let q = Query {
            text: text.into(),
            image: None,
            modality: Modality::TextOnly,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn image_text(image: ImageRef, text: impl Into<String>) -> Result<Self, ValidationError> {
        let q = Query {
            text: text.into(),
            image: Some(image),
            modality: Modality::ImageText,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.text.trim().is_empty() {
            return Err(ValidationError::EmptyQueryText);
        }
        if (self.modality == Modality::ImageText) != self.image.is_some() {
            return Err(ValidationError::ModalityMismatch { modality: self.modality });
        }
        Ok(())
    }
}

/// Benchmark subtasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subtask {
    SE,
    AC,
    EV,
    TM,
    CT,
    AN,
}

impl Subtask {
    pub const ALL: [Subtask; 6] = [Subtask::SE, Subtask::AC, Subtask::EV, Subtask::TM, Subtask::CT, Subtask::AN];

    pub fn is_person_specific(self) -> bool {
        matches!(self, Subtask::SE | Subtask::AC | Subtask::EV | Subtask::TM)
    }

    pub fn code(self) -> &'static str {
        match self {
            Subtask::SE => "SE",
            Subtask::AC => "AC",
            Subtask::EV => "EV",
            Subtask::TM => "TM",
            Subtask::CT => "CT",
            Subtask::AN => "AN",
        }
    }
}

impl fmt::Display for Subtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Options of a binary search question. Index 1 encodes "target absent".
pub const SEARCH_OPTIONS: [&str; 2] = ["Yes", "No"];
pub const SEARCH_ABSENT_INDEX: usize = 1;

/// One benchmark question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSample {
    pub sample_id: String,
    pub video_id: String,
    pub subtask: Subtask,
    pub query: Query,
    pub options: Vec<String>,
    pub answer_index: usize,
    pub ground_truth: IntervalSet,
    #[serde(default)]
    pub is_negative: bool,
}

impl QaSample {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let fail = |reason: &str| {
            Err(ValidationError::Sample {
                id: self.sample_id.clone(),
                reason: reason.to_string(),
            })
        };
        self.query.validate()?;
        if !(2..=4).contains(&self.options.len()) {
            return fail("options must number between 2 and 4");
        }
        if self.answer_index >= self.options.len() {
            return fail("answer_index out of range");
        }
        if self.subtask != Subtask::SE && self.options.len() < 3 {
            return fail("multiple-choice subtasks need at least 3 options");
        }
        if self.subtask == Subtask::SE && self.options.len() != 2 {
            return fail("search questions are binary");
        }
        if self.is_negative {
            if self.subtask != Subtask::SE {
                return fail("only search samples can be negative");
            }
            if !self.ground_truth.is_empty() {
                return fail("negative sample carries ground-truth intervals");
            }
        }
        Ok(())
    }

    /// Index of the option meaning "target absent", for search questions.
    pub fn absent_index(&self) -> Option<usize> {
        (self.subtask == Subtask::SE).then(|| {
            self.options
                .iter()
                .position(|o| o.trim().eq_ignore_ascii_case("no"))
                .unwrap_or(SEARCH_ABSENT_INDEX)
        })
    }
}

/// A system's answer to one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub chosen_index: Option<usize>,
    pub predicted_intervals: IntervalSet,
    #[serde(default)]
    pub raw_response: String,
}
