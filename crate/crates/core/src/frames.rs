//! Video manifests, frame sources and the pixel operations applied to
//! frames (crop to a box, draw a box outline).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{BBox, ImageRef};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("unknown video `{0}`")]
    UnknownVideo(String),
    #[error("frame {frame_index} of video `{video_id}` is not available")]
    Missing { video_id: String, frame_index: u64 },
    #[error("image decode failed: {0}")]
    Decode(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Sidecar describing one source video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub video_id: String,
    pub camera_id: String,
    pub fps: f64,
    pub duration_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_uri: Option<String>,
}

impl VideoManifest {
    pub fn total_frames(&self) -> u64 {
        (self.duration_seconds * self.fps).floor().max(0.0) as u64
    }

    pub fn timestamp(&self, frame_index: u64) -> f64 {
        frame_index as f64 / self.fps
    }

    /// Frame shown at time `t`, clamped to the last frame.
    pub fn frame_at(&self, t: f64) -> u64 {
        let idx = (t * self.fps + 1e-9).floor().max(0.0) as u64;
        idx.min(self.total_frames().saturating_sub(1))
    }
}

/// An encoded image (PNG or JPEG bytes) taken from a video.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    pub data: Vec<u8>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Frame({} bytes)", self.data.len())
    }
}

impl Frame {
    pub fn decode(&self) -> Result<RgbImage, FrameError> {
        decode_rgb(&self.data)
    }

    pub fn from_rgb(img: &RgbImage) -> Frame {
        Frame { data: encode_png(img) }
    }
}

pub fn decode_rgb(data: &[u8]) -> Result<RgbImage, FrameError> {
    image::load_from_memory(data)
        .map(|i| i.to_rgb8())
        .map_err(|e| FrameError::Decode(e.to_string()))
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    out.into_inner()
}

/// Crops `frame` to `bbox` (clipped to the canvas). Returns the frame
/// unchanged when the box lies entirely outside the image.
pub fn crop(frame: &Frame, bbox: &BBox) -> Result<Frame, FrameError> {
    let img = frame.decode()?;
    match bbox.pixel_rect(img.width(), img.height()) {
        Some((x, y, w, h)) => {
            let sub = image::imageops::crop_imm(&img, x, y, w, h).to_image();
            Ok(Frame::from_rgb(&sub))
        }
        None => Ok(frame.clone()),
    }
}

pub const OVERLAY_STROKE: u32 = 3;
pub const OVERLAY_COLOR: [u8; 3] = [255, 0, 0];

/// Draws a solid outline of `stroke` pixels along the inside of `bbox`.
pub fn draw_box(img: &mut RgbImage, bbox: &BBox, stroke: u32, color: [u8; 3]) {
    let Some((x, y, w, h)) = bbox.pixel_rect(img.width(), img.height()) else {
        return;
    };
    let px = Rgb(color);
    for yy in y..y + h {
        for xx in x..x + w {
            let edge = xx < x + stroke || xx + stroke >= x + w || yy < y + stroke || yy + stroke >= y + h;
            if edge {
                img.put_pixel(xx, yy, px);
            }
        }
    }
}

pub fn overlay(frame: &Frame, bbox: &BBox) -> Result<Frame, FrameError> {
    let mut img = frame.decode()?;
    draw_box(&mut img, bbox, OVERLAY_STROKE, OVERLAY_COLOR);
    Ok(Frame::from_rgb(&img))
}

/// Anything that can serve decoded-on-demand frames of registered videos.
pub trait FrameSource: Send + Sync {
    fn manifest(&self, video_id: &str) -> Result<VideoManifest, FrameError>;
    fn frame(&self, video_id: &str, frame_index: u64) -> Result<Frame, FrameError>;
}

/// Serves frames stored as `<frame_dir>/<index:06>.png` (or `.jpg`).
#[derive(Debug, Default, Clone)]
pub struct DirFrameSource {
    videos: BTreeMap<String, VideoManifest>,
}

impl DirFrameSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, manifest: VideoManifest) {
        self.videos.insert(manifest.video_id.clone(), manifest);
    }

    fn frame_path(dir: &Path, frame_index: u64) -> Option<PathBuf> {
        ["png", "jpg", "jpeg"]
            .iter()
            .map(|ext| dir.join(format!("{frame_index:06}.{ext}")))
            .find(|p| p.exists())
    }
}

impl FrameSource for DirFrameSource {
    fn manifest(&self, video_id: &str) -> Result<VideoManifest, FrameError> {
        self.videos
            .get(video_id)
            .cloned()
            .ok_or_else(|| FrameError::UnknownVideo(video_id.to_string()))
    }

    fn frame(&self, video_id: &str, frame_index: u64) -> Result<Frame, FrameError> {
        let m = self
            .videos
            .get(video_id)
            .ok_or_else(|| FrameError::UnknownVideo(video_id.to_string()))?;
        let missing = || FrameError::Missing {
            video_id: video_id.to_string(),
            frame_index,
        };
        let dir = m.frame_dir.as_ref().ok_or_else(missing)?;
        let path = Self::frame_path(dir, frame_index).ok_or_else(missing)?;
        let data = fs::read(&path).map_err(|source| FrameError::Io { path, source })?;
        Ok(Frame { data })
    }
}

/// Resolves an image reference to raw bytes. URIs are local paths,
/// optionally prefixed with `file://`.
pub fn load_image(image: &ImageRef) -> Result<Vec<u8>, FrameError> {
    match image {
        ImageRef::Bytes(b) => Ok(b.clone()),
        ImageRef::Uri(u) => {
            let path = PathBuf::from(u.strip_prefix("file://").unwrap_or(u));
            fs::read(&path).map_err(|source| FrameError::Io { path, source })
        }
    }
}
