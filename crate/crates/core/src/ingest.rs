//! Detections in, indexed clips out: tracking, clip building and embedding
//! for one video.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderError, EncoderGateway};
use crate::frames::{FrameError, FrameSource};
use crate::par;
use crate::tracklet::{self, ClipPolicy, TrackerConfig, TrackletError};
use crate::types::{Clip, Detection, EmbeddingRecord};
use crate::vecindex::{IndexError, SharedIndex};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Tracking(#[from] TrackletError),
    #[error(transparent)]
    Frames(#[from] FrameError),
    #[error("clip `{clip_id}`: {source}")]
    Encoding {
        clip_id: String,
        #[source]
        source: EncoderError,
    },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("detection for video `{got}` in a batch for `{expected}`")]
    ForeignDetection { expected: String, got: String },
}

impl IngestError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, IngestError::Encoding { source, .. } if source.is_retriable())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub tracker: TrackerConfig,
    pub clips: ClipPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub video_id: String,
    pub tracks: usize,
    pub clips: usize,
}

/// Tracks and clips one video and embeds every clip. Nothing is indexed.
pub fn prepare_video(
    video_id: &str,
    detections: &[Detection],
    source: &dyn FrameSource,
    gateway: &EncoderGateway,
    cfg: &IngestConfig,
) -> Result<(Vec<(EmbeddingRecord, Clip)>, IngestSummary), IngestError> {
    if let Some(d) = detections.iter().find(|d| d.video_id != video_id) {
        return Err(IngestError::ForeignDetection {
            expected: video_id.to_string(),
            got: d.video_id.clone(),
        });
    }
    cfg.clips.validate()?;
    let manifest = source.manifest(video_id)?;
    let tracks = tracklet::associate(detections, &cfg.tracker)?;
    let clips = tracklet::build_clips(&manifest, &tracks, &cfg.clips);
    let embedded = par::map(&clips, |c| gateway.embed_clip(c, source));
    let mut out = Vec::with_capacity(clips.len());
    for (clip, rec) in clips.into_iter().zip(embedded) {
        let rec = rec.map_err(|source| IngestError::Encoding {
            clip_id: clip.clip_id.clone(),
            source,
        })?;
        out.push((rec, clip));
    }
    let summary = IngestSummary {
        video_id: video_id.to_string(),
        tracks: tracks.len(),
        clips: out.len(),
    };
    Ok((out, summary))
}

/// [`prepare_video`] followed by one atomic index update that replaces any
/// clips previously indexed for the video.
pub fn ingest_video(
    video_id: &str,
    detections: &[Detection],
    source: &dyn FrameSource,
    gateway: &EncoderGateway,
    index: &SharedIndex,
    cfg: &IngestConfig,
) -> Result<IngestSummary, IngestError> {
    let (batch, summary) = prepare_video(video_id, detections, source, gateway, cfg)?;
    replace_video(index, video_id, batch)?;
    Ok(summary)
}

/// Swaps a video's clips for `batch` in one index update.
pub fn replace_video(index: &SharedIndex, video_id: &str, batch: Vec<(EmbeddingRecord, Clip)>) -> Result<(), IndexError> {
    index.update(|ix| {
        let stale: Vec<String> = ix.clips().filter(|c| c.video_id == video_id).map(|c| c.clip_id.clone()).collect();
        for id in &stale {
            ix.remove(id);
        }
        for (rec, clip) in batch {
            ix.insert(rec, clip)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::mock::{MockEncoder, MockEncoderConfig};
    use crate::encoder::EncoderProfile;
    use crate::synth::{scenario, ScenarioConfig};
    use crate::vecindex::VecIndex;
    use std::sync::Arc;

    #[test]
    fn ingest_is_idempotent_per_video() {
        let sc = scenario(&ScenarioConfig {
            videos: 2,
            ..Default::default()
        });
        let enc = MockEncoder::new(MockEncoderConfig {
            palette: sc.world.palette().clone(),
            ..Default::default()
        });
        let gw = EncoderGateway::new(Arc::new(enc), EncoderProfile::default());
        let index = SharedIndex::new(VecIndex::new(512));
        let v = sc.world.video("vid000").unwrap();
        let dets = v.detections();
        let s = ingest_video("vid000", &dets, &sc.world, &gw, &index, &IngestConfig::default()).unwrap();
        assert_eq!(s.tracks, 6);
        assert_eq!(s.clips, index.snapshot().len());
        let again = ingest_video("vid000", &dets, &sc.world, &gw, &index, &IngestConfig::default()).unwrap();
        assert_eq!(again.clips, index.snapshot().len());
    }

    #[test]
    fn foreign_detections_rejected() {
        let sc = scenario(&ScenarioConfig {
            videos: 2,
            ..Default::default()
        });
        let gw = EncoderGateway::new(Arc::new(MockEncoder::new(Default::default())), EncoderProfile::default());
        let dets = sc.world.video("vid001").unwrap().detections();
        let r = prepare_video("vid000", &dets, &sc.world, &gw, &IngestConfig::default());
        assert!(matches!(r, Err(IngestError::ForeignDetection { .. })));
    }
}
