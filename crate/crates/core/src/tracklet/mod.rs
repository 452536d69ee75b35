//! Person tracking over ingested detections and segmentation of tracks into
//! indexable clips.
//!
//! Association follows the usual two-tier scheme: high-confidence detections
//! are matched to the predicted positions of live tracks first, leftover
//! tracks then get a second chance against low-confidence detections, and
//! unmatched high-confidence detections open new tracks. Videos are
//! independent and are tracked in parallel; frames within a video are
//! strictly sequential.

mod assign;
mod clips;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::types::{BBox, Detection, Observation, Track};

pub use assign::{hungarian, match_pairs, Assignment};
pub use clips::{build_clips, full_frame_clips, tracks_to_clips, ClipPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackletError {
    #[error("video `{video_id}`: frame index went from {previous} back to {got}")]
    OutOfOrderFrames { video_id: String, previous: u64, got: u64 },
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    None,
    #[default]
    ConstantVelocity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub iou_gate: f64,
    pub high_score: f64,
    pub low_score: f64,
    pub max_gap_frames: u64,
    pub min_track_len: usize,
    pub motion: Motion,
    pub assignment: Assignment,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_gate: 0.3,
            high_score: 0.6,
            low_score: 0.1,
            max_gap_frames: 30,
            min_track_len: 5,
            motion: Motion::ConstantVelocity,
            assignment: Assignment::Greedy,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackletError> {
        let bad = |m: &str| Err(TrackletError::InvalidConfig(m.to_string()));
        if !(self.iou_gate > 0.0 && self.iou_gate <= 1.0) {
            return bad("iou_gate must lie in (0, 1]");
        }
        if self.low_score >= self.high_score {
            return bad("low_score must be below high_score");
        }
        if self.min_track_len < 1 {
            return bad("min_track_len must be at least 1");
        }
        Ok(())
    }
}

/// Box as plain `[x, y, w, h]`; predictions may leave the canvas.
type Tlwh = [f64; 4];

fn tlwh(b: &BBox) -> Tlwh {
    [b.x, b.y, b.w, b.h]
}

fn iou_tlwh(a: &Tlwh, b: &Tlwh) -> f64 {
    let iw = ((a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0])).max(0.0);
    let ih = ((a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

struct LiveTrack {
    id: u64,
    observations: Vec<Observation>,
}

impl LiveTrack {
    fn last_frame(&self) -> u64 {
        self.observations.last().map(|o| o.frame_index).unwrap_or(0)
    }

    fn predict(&self, frame: u64, motion: Motion) -> Tlwh {
        let n = self.observations.len();
        let last = &self.observations[n - 1];
        let cur = tlwh(&last.bbox);
        if motion == Motion::None || n < 2 {
            return cur;
        }
        let prev = &self.observations[n - 2];
        let span = (last.frame_index - prev.frame_index) as f64;
        let ahead = frame.saturating_sub(last.frame_index) as f64;
        let before = tlwh(&prev.bbox);
        let mut out = cur;
        for k in 0..4 {
            out[k] = cur[k] + (cur[k] - before[k]) / span * ahead;
        }
        if out[2] <= 0.0 || out[3] <= 0.0 {
            out[2] = cur[2];
            out[3] = cur[3];
        }
        out
    }
}

/// Groups person detections into tracks. Output is ordered by
/// `(video_id, track_id)`; track ids count from 1 within each video.
pub fn associate(detections: &[Detection], cfg: &TrackerConfig) -> Result<Vec<Track>, TrackletError> {
    cfg.validate()?;
    let mut by_video: BTreeMap<&str, Vec<&Detection>> = BTreeMap::new();
    for d in detections {
        by_video.entry(d.video_id.as_str()).or_default().push(d);
    }
    let groups: Vec<(&str, Vec<&Detection>)> = by_video.into_iter().collect();
    let per_video = par::map(&groups, |(vid, dets)| track_video(vid, dets, cfg));
    let mut out = Vec::new();
    for tracks in per_video {
        out.extend(tracks?);
    }
    Ok(out)
}

fn track_video(video_id: &str, dets: &[&Detection], cfg: &TrackerConfig) -> Result<Vec<Track>, TrackletError> {
    let mut live: Vec<LiveTrack> = Vec::new();
    let mut done: Vec<LiveTrack> = Vec::new();
    let mut next_id = 1u64;
    let mut i = 0;
    let mut previous: Option<u64> = None;
    while i < dets.len() {
        let frame = dets[i].frame_index;
        if let Some(p) = previous {
            if frame < p {
                return Err(TrackletError::OutOfOrderFrames {
                    video_id: video_id.to_string(),
                    previous: p,
                    got: frame,
                });
            }
        }
        previous = Some(frame);
        let mut j = i;
        while j < dets.len() && dets[j].frame_index == frame {
            j += 1;
        }
        let frame_dets: Vec<&Detection> = dets[i..j]
            .iter()
            .copied()
            .filter(|d| d.class_label.eq_ignore_ascii_case("person") && d.score >= cfg.low_score)
            .collect();
        i = j;

        // close tracks whose gap already exceeds the budget
        let (keep, expired): (Vec<_>, Vec<_>) = live
            .into_iter()
            .partition(|t| frame - t.last_frame() - 1 <= cfg.max_gap_frames);
        live = keep;
        done.extend(expired);

        let high: Vec<&Detection> = frame_dets.iter().copied().filter(|d| d.score >= cfg.high_score).collect();
        let low: Vec<&Detection> = frame_dets.iter().copied().filter(|d| d.score < cfg.high_score).collect();

        let predicted: Vec<Tlwh> = live.iter().map(|t| t.predict(frame, cfg.motion)).collect();
        let keys: Vec<u64> = live.iter().map(|t| t.id).collect();

        let (first, high_left) = match_tier(&predicted, &keys, &(0..live.len()).collect::<Vec<_>>(), &high, cfg);
        let mut track_matched = vec![false; live.len()];
        for &(t, d) in &first {
            track_matched[t] = true;
            push_obs(&mut live[t], high[d]);
        }
        let remaining: Vec<usize> = (0..live.len()).filter(|&t| !track_matched[t]).collect();
        let (second, _) = match_tier(&predicted, &keys, &remaining, &low, cfg);
        for &(t, d) in &second {
            push_obs(&mut live[t], low[d]);
        }
        for d in high_left {
            live.push(LiveTrack {
                id: next_id,
                observations: vec![obs(high[d])],
            });
            next_id += 1;
        }
    }
    done.extend(live);
    let mut tracks: Vec<Track> = done
        .into_iter()
        .filter(|t| t.observations.len() >= cfg.min_track_len)
        .map(|t| Track {
            track_id: t.id,
            video_id: video_id.to_string(),
            observations: t.observations,
        })
        .collect();
    tracks.sort_by_key(|t| t.track_id);
    Ok(tracks)
}

/// Matches the `candidates` subset of tracks against `dets`. Returns matched
/// `(track index, detection index)` pairs and the unmatched detections.
fn match_tier(
    predicted: &[Tlwh],
    keys: &[u64],
    candidates: &[usize],
    dets: &[&Detection],
    cfg: &TrackerConfig,
) -> (Vec<(usize, usize)>, Vec<usize>) {
    if candidates.is_empty() || dets.is_empty() {
        return (Vec::new(), (0..dets.len()).collect());
    }
    let iou: Vec<Vec<f64>> = candidates
        .iter()
        .map(|&t| dets.iter().map(|d| iou_tlwh(&predicted[t], &tlwh(&d.bbox))).collect())
        .collect();
    let row_keys: Vec<u64> = candidates.iter().map(|&t| keys[t]).collect();
    let pairs = match_pairs(&iou, &row_keys, cfg.iou_gate, cfg.assignment);
    let mut used = vec![false; dets.len()];
    let matched = pairs
        .into_iter()
        .map(|(r, c)| {
            used[c] = true;
            (candidates[r], c)
        })
        .collect();
    let left = (0..dets.len()).filter(|&c| !used[c]).collect();
    (matched, left)
}

fn obs(d: &Detection) -> Observation {
    Observation {
        frame_index: d.frame_index,
        timestamp: d.timestamp,
        bbox: d.bbox,
    }
}

fn push_obs(t: &mut LiveTrack, d: &Detection) {
    t.observations.push(obs(d));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(video: &str, frame: u64, x: f64, y: f64, score: f64) -> Detection {
        Detection {
            video_id: video.into(),
            frame_index: frame,
            timestamp: frame as f64 / 10.0,
            bbox: BBox::of(x, y, 20.0, 40.0),
            score,
            class_label: "person".into(),
        }
    }

    #[test]
    fn empty_stream_gives_no_tracks() {
        assert!(associate(&[], &TrackerConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn two_stationary_targets_give_two_full_tracks() {
        let mut d = Vec::new();
        for f in 0..20 {
            d.push(det("v", f, 10.0, 10.0, 0.9));
            d.push(det("v", f, 200.0, 10.0, 0.9));
        }
        let tracks = associate(&d, &TrackerConfig::default()).unwrap();
        assert_eq!(tracks.len(), 2);
        assert!(tracks.iter().all(|t| t.observations.len() == 20));
        assert!(tracks.iter().all(|t| t.validate().is_ok()));
    }

    #[test]
    fn gap_longer_than_budget_splits_track() {
        let cfg = TrackerConfig::default();
        let gap = cfg.max_gap_frames + 1;
        let mut d: Vec<Detection> = (0..10).map(|f| det("v", f, 10.0, 10.0, 0.9)).collect();
        d.extend((10 + gap..20 + gap).map(|f| det("v", f, 10.0, 10.0, 0.9)));
        assert_eq!(associate(&d, &cfg).unwrap().len(), 2);

        // exactly the budget keeps one track
        let mut d: Vec<Detection> = (0..10).map(|f| det("v", f, 10.0, 10.0, 0.9)).collect();
        d.extend((10 + cfg.max_gap_frames..20 + cfg.max_gap_frames).map(|f| det("v", f, 10.0, 10.0, 0.9)));
        assert_eq!(associate(&d, &cfg).unwrap().len(), 1);
    }

    #[test]
    fn low_score_detections_extend_but_never_start_tracks() {
        let mut d: Vec<Detection> = (0..5).map(|f| det("v", f, 10.0, 10.0, 0.9)).collect();
        d.extend((5..10).map(|f| det("v", f, 10.0, 10.0, 0.3)));
        // a lone low-score target elsewhere
        d.extend((0..10).map(|f| det("v", f, 300.0, 10.0, 0.3)));
        d.sort_by_key(|d| d.frame_index);
        let tracks = associate(&d, &TrackerConfig::default()).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].observations.len(), 10);
    }

    #[test]
    fn regressing_frames_are_rejected() {
        let d = vec![det("v", 5, 0.0, 0.0, 0.9), det("v", 4, 0.0, 0.0, 0.9)];
        assert!(matches!(
            associate(&d, &TrackerConfig::default()),
            Err(TrackletError::OutOfOrderFrames { previous: 5, got: 4, .. })
        ));
    }

    #[test]
    fn non_person_and_short_tracks_are_dropped() {
        let mut d: Vec<Detection> = (0..3).map(|f| det("v", f, 10.0, 10.0, 0.9)).collect();
        d.extend((0..10).map(|f| Detection {
            class_label: "car".into(),
            ..det("v", f, 100.0, 10.0, 0.9)
        }));
        d.sort_by_key(|d| d.frame_index);
        assert!(associate(&d, &TrackerConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn videos_are_tracked_independently() {
        let mut d = Vec::new();
        for f in 0..10 {
            d.push(det("b", f, 10.0, 10.0, 0.9));
            d.push(det("a", f, 10.0, 10.0, 0.9));
        }
        let tracks = associate(&d, &TrackerConfig::default()).unwrap();
        let vids: Vec<&str> = tracks.iter().map(|t| t.video_id.as_str()).collect();
        assert_eq!(vids, ["a", "b"]);
        assert!(tracks.iter().all(|t| t.track_id == 1));
    }

    #[test]
    fn config_validation() {
        let cfg = TrackerConfig {
            low_score: 0.7,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrackerConfig {
            iou_gate: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
