//! Track segmentation into clips, and fixed-window full-frame clips.

use serde::{Deserialize, Serialize};

use super::TrackletError;
use crate::frames::VideoManifest;
use crate::interval::TimeInterval;
use crate::types::{Clip, ClipMode, FrameBox, Observation, Track};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipPolicy {
    pub split_gap_seconds: f64,
    pub max_clip_seconds: f64,
    pub mode: ClipMode,
    pub full_frame_window_seconds: f64,
    pub full_frame_fps: f64,
}

impl Default for ClipPolicy {
    fn default() -> Self {
        Self {
            split_gap_seconds: 2.0,
            max_clip_seconds: 30.0,
            mode: ClipMode::PersonCentric,
            full_frame_window_seconds: 10.0,
            full_frame_fps: 1.0,
        }
    }
}

impl ClipPolicy {
    /// Frame-level indexing: one sampled frame per clip at `fps`.
    pub fn frame_level(fps: f64) -> Self {
        Self {
            mode: ClipMode::FullFrame,
            full_frame_window_seconds: 1.0 / fps,
            full_frame_fps: fps,
            ..Self::default()
        }
    }

    // negated comparisons so NaN fails
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), TrackletError> {
        let bad = |m: &str| Err(TrackletError::InvalidConfig(m.to_string()));
        if !(self.split_gap_seconds > 0.0) {
            return bad("split_gap_seconds must be positive");
        }
        if !(self.max_clip_seconds > self.split_gap_seconds) {
            return bad("max_clip_seconds must exceed split_gap_seconds");
        }
        if !(self.full_frame_window_seconds > 0.0 && self.full_frame_fps > 0.0) {
            return bad("full-frame window and fps must be positive");
        }
        Ok(())
    }
}

/// Splits each track at gaps longer than `split_gap_seconds` and caps clip
/// length at `max_clip_seconds`. `camera_for` maps a video id to its camera.
pub fn tracks_to_clips(tracks: &[Track], policy: &ClipPolicy, camera_for: impl Fn(&str) -> String) -> Vec<Clip> {
    let mut clips = Vec::new();
    for track in tracks {
        let camera = camera_for(&track.video_id);
        let mut pieces: Vec<Vec<&Observation>> = Vec::new();
        for o in &track.observations {
            let start_new = match pieces.last() {
                None => true,
                Some(cur) => {
                    let prev = cur[cur.len() - 1];
                    o.timestamp - prev.timestamp > policy.split_gap_seconds
                        || o.timestamp - cur[0].timestamp > policy.max_clip_seconds
                }
            };
            if start_new {
                pieces.push(vec![o]);
            } else {
                pieces.last_mut().expect("non-empty").push(o);
            }
        }
        for (k, obs) in pieces.into_iter().enumerate() {
            let first = obs[0];
            let last = obs[obs.len() - 1];
            clips.push(Clip {
                clip_id: format!("{}/t{:04}/c{:02}", track.video_id, track.track_id, k),
                camera_id: camera.clone(),
                video_id: track.video_id.clone(),
                span: TimeInterval::new(first.timestamp.max(0.0), last.timestamp.max(first.timestamp.max(0.0)))
                    .expect("observation timestamps are finite and ordered"),
                boxes: obs
                    .iter()
                    .map(|o| FrameBox {
                        frame_index: o.frame_index,
                        bbox: o.bbox,
                    })
                    .collect(),
                mode: ClipMode::PersonCentric,
                frame_count: obs.len() as u32,
                frames: obs.iter().map(|o| o.frame_index).collect(),
            });
        }
    }
    clips
}

/// Partitions a whole video into consecutive windows. Each clip references
/// frames sampled at `full_frame_fps` within its window (at least one).
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn full_frame_clips(video: &VideoManifest, policy: &ClipPolicy) -> Vec<Clip> {
    let duration = video.duration_seconds;
    let window = policy.full_frame_window_seconds;
    if !(duration > 0.0) || !(window > 0.0) {
        return Vec::new();
    }
    let mut clips = Vec::new();
    let mut k = 0u64;
    loop {
        let start = k as f64 * window;
        if start >= duration - 1e-9 {
            break;
        }
        let end = ((k + 1) as f64 * window).min(duration);
        let mut frames: Vec<u64> = Vec::new();
        let step = 1.0 / policy.full_frame_fps;
        let mut i = 0u64;
        loop {
            let t = start + i as f64 * step;
            if i > 0 && t >= end - 1e-9 {
                break;
            }
            let f = video.frame_at(t);
            if frames.last() != Some(&f) {
                frames.push(f);
            }
            i += 1;
        }
        clips.push(Clip {
            clip_id: format!("{}/ff{:05}", video.video_id, k),
            camera_id: video.camera_id.clone(),
            video_id: video.video_id.clone(),
            span: TimeInterval::new(start, end).expect("window bounds are ordered"),
            boxes: Vec::new(),
            mode: ClipMode::FullFrame,
            frame_count: frames.len() as u32,
            frames,
        });
        k += 1;
    }
    clips
}

/// Builds clips for one video under the policy's mode.
pub fn build_clips(video: &VideoManifest, tracks: &[Track], policy: &ClipPolicy) -> Vec<Clip> {
    match policy.mode {
        ClipMode::PersonCentric => {
            let own: Vec<Track> = tracks.iter().filter(|t| t.video_id == video.video_id).cloned().collect();
            tracks_to_clips(&own, policy, |_| video.camera_id.clone())
        }
        ClipMode::FullFrame => full_frame_clips(video, policy),
    }
}
