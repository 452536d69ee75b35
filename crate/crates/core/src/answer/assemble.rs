use std::fmt::Write as _;

use super::{AnswerError, FrameOrder, GroundingMode, TimedFrame, VlmRequest, SYSTEM_PROMPT_V1};
use crate::encoder::{sample_frames, ImageBytes};
use crate::frames::{self, FrameSource};
use crate::types::{Clip, QaSample, Query};
use crate::vecindex::SearchHit;

const LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

fn missing(clip: &Clip, e: impl ToString) -> AnswerError {
    AnswerError::MissingFrames {
        clip_id: clip.clip_id.clone(),
        reason: e.to_string(),
    }
}

/// Metadata line for the clip at 1-based rank `rank`, listing the box of
/// each sampled frame.
pub fn coords_line(rank: usize, clip: &Clip, sampled: &[(u64, f64)]) -> String {
    let mut s = format!(
        "Clip {rank}: camera {}, time {:.2}–{:.2} s, bbox per-frame",
        clip.camera_id,
        clip.span.start(),
        clip.span.end()
    );
    let mut any = false;
    for &(idx, t) in sampled {
        if let Some(b) = clip.box_at(idx) {
            let _ = write!(s, " [{:.0},{:.0},{:.0},{:.0}]@{t:.2}s", b.x, b.y, b.w, b.h);
            any = true;
        }
    }
    if !any {
        s.push_str(" none (full frame)");
    }
    s
}

/// Builds the VLM input from at most `mode.top_k` hits.
pub fn assemble(
    hits: &[SearchHit],
    query: &Query,
    sample: Option<&QaSample>,
    mode: &GroundingMode,
    source: &dyn FrameSource,
) -> Result<VlmRequest, AnswerError> {
    mode.validate()?;
    query.validate().map_err(|e| AnswerError::Query(e.to_string()))?;
    let hits = &hits[..hits.len().min(mode.top_k)];
    let mut warnings = Vec::new();
    let mut out_frames: Vec<TimedFrame> = Vec::new();
    let mut meta_lines = Vec::new();

    for (rank, hit) in hits.iter().enumerate() {
        let clip = &hit.clip;
        let manifest = source.manifest(&clip.video_id).map_err(|e| missing(clip, e))?;
        let picks: Vec<(u64, f64)> = sample_frames(clip.frames.len(), mode.frames_per_clip)
            .into_iter()
            .map(|i| (clip.frames[i], manifest.timestamp(clip.frames[i])))
            .collect();
        if (mode.crop || mode.overlay) && clip.boxes.is_empty() {
            warnings.push(format!("clip {} has no boxes; frames passed unmodified", clip.clip_id));
        }
        for &(idx, t) in &picks {
            let frame = source.frame(&clip.video_id, idx).map_err(|e| missing(clip, e))?;
            let frame = match clip.box_at(idx) {
                Some(b) if mode.crop => frames::crop(&frame, b).map_err(|e| missing(clip, e))?,
                Some(b) if mode.overlay => frames::overlay(&frame, b).map_err(|e| missing(clip, e))?,
                _ => frame,
            };
            out_frames.push(TimedFrame {
                timestamp: t,
                image: ImageBytes(frame.data),
                clip_id: Some(clip.clip_id.clone()),
            });
        }
        if mode.coords {
            meta_lines.push(coords_line(rank + 1, clip, &picks));
        }
    }

    if mode.extra_uniform_frames > 0 {
        let video = sample.map(|s| s.video_id.clone()).or_else(|| hits.first().map(|h| h.clip.video_id.clone()));
        match video {
            Some(v) => {
                let m = source.manifest(&v).map_err(|e| AnswerError::MissingFrames {
                    clip_id: v.clone(),
                    reason: e.to_string(),
                })?;
                for i in sample_frames(m.total_frames() as usize, mode.extra_uniform_frames) {
                    let frame = source.frame(&v, i as u64).map_err(|e| AnswerError::MissingFrames {
                        clip_id: v.clone(),
                        reason: e.to_string(),
                    })?;
                    out_frames.push(TimedFrame {
                        timestamp: m.timestamp(i as u64),
                        image: ImageBytes(frame.data),
                        clip_id: None,
                    });
                }
            }
            None => warnings.push("no video known for uniform context frames".into()),
        }
    }

    if mode.order == FrameOrder::Chronological {
        out_frames.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    }

    let mut text = String::new();
    let _ = writeln!(text, "Question: {}", query.text.trim());
    if query.image.is_some() {
        text.push_str("The attached query image shows the person of interest.\n");
    }
    if hits.is_empty() {
        text.push_str("No clips were retrieved for this question.\n");
    }
    if !meta_lines.is_empty() {
        text.push_str("\nRetrieved clips:\n");
        for l in &meta_lines {
            text.push_str(l);
            text.push('\n');
        }
    }
    if !out_frames.is_empty() {
        text.push_str("\nFrames:\n");
        for (j, f) in out_frames.iter().enumerate() {
            let from = match &f.clip_id {
                Some(c) => {
                    let rank = hits.iter().position(|h| &h.clip_id == c).map_or(0, |r| r + 1);
                    format!("clip {rank}")
                }
                None => "uniform sample".to_string(),
            };
            let _ = writeln!(text, "Frame {}: t={:.2} s ({from})", j + 1, f.timestamp);
        }
    }
    let options: Vec<String> = sample.map(|s| s.options.clone()).unwrap_or_default();
    if !options.is_empty() {
        text.push_str("\nOptions:\n");
        for (i, o) in options.iter().enumerate() {
            let _ = writeln!(text, "{}. {o}", LETTERS.get(i).copied().unwrap_or('?'));
        }
        text.push_str("Answer with the letter of one option.\n");
    }

    let query_image = match &query.image {
        Some(img) => Some(ImageBytes(
            frames::load_image(img).map_err(|e| AnswerError::Query(e.to_string()))?,
        )),
        None => None,
    };

    Ok(VlmRequest {
        system_prompt: SYSTEM_PROMPT_V1.to_string(),
        user_text: text,
        query_image,
        frames: out_frames,
        sample_id: sample.map(|s| s.sample_id.clone()),
        options,
        warnings,
    })
}
