use std::sync::Arc;
use std::time::Instant;

use super::{answer, assemble, AnswerError, GroundingMode, VlmBackend, VlmResponse};
use crate::encoder::{EncoderGateway, RetryPolicy};
use crate::eval::{QaSystem, StageLatency, SystemError, SystemOutput};
use crate::frames::FrameSource;
use crate::types::{Prediction, QaSample, Query};
use crate::vecindex::{SearchFilter, SearchHit, SharedIndex};

/// Retrieve, assemble, generate.
pub struct RagPipeline {
    pub gateway: Arc<EncoderGateway>,
    pub index: Arc<SharedIndex>,
    pub frames: Arc<dyn FrameSource>,
    pub vlm: Arc<dyn VlmBackend>,
    pub mode: GroundingMode,
    pub retry: RetryPolicy,
    /// Hits kept in the retrieval log, at least `mode.top_k`.
    pub log_depth: usize,
}

#[derive(Debug, Clone)]
pub struct RagOutput {
    pub hits: Vec<SearchHit>,
    pub frames_sent: usize,
    /// `None` when the VLM could not be reached; retrieval still stands.
    pub response: Option<VlmResponse>,
    pub latency: StageLatency,
    pub warnings: Vec<String>,
}

impl RagPipeline {
    pub fn new(
        gateway: Arc<EncoderGateway>,
        index: Arc<SharedIndex>,
        frames: Arc<dyn FrameSource>,
        vlm: Arc<dyn VlmBackend>,
    ) -> Self {
        Self {
            gateway,
            index,
            frames,
            vlm,
            mode: GroundingMode::default(),
            retry: RetryPolicy::default(),
            log_depth: 10,
        }
    }

    pub fn retrieve(&self, query: &Query, k: usize, filter: Option<&SearchFilter>) -> Result<Vec<SearchHit>, AnswerError> {
        let v = self.gateway.embed_query(query)?;
        self.index.search(&v, k, filter).map_err(|e| AnswerError::Retrieval(e.to_string()))
    }

    pub fn run(&self, query: &Query, filter: Option<&SearchFilter>, sample: Option<&QaSample>) -> Result<RagOutput, AnswerError> {
        self.run_with(query, filter, sample, &self.mode)
    }

    pub fn run_with(
        &self,
        query: &Query,
        filter: Option<&SearchFilter>,
        sample: Option<&QaSample>,
        mode: &GroundingMode,
    ) -> Result<RagOutput, AnswerError> {
        mode.validate()?;
        let t0 = Instant::now();
        let hits = self.retrieve(query, self.log_depth.max(mode.top_k), filter)?;
        let retrieval_ms = t0.elapsed().as_secs_f64() * 1e3;
        let request = assemble(&hits, query, sample, mode, self.frames.as_ref())?;
        let mut warnings = request.warnings.clone();
        let t1 = Instant::now();
        let response = match answer(&request, self.vlm.as_ref(), &self.retry) {
            Ok(r) => Some(r),
            Err(e @ AnswerError::VlmUnavailable(_)) => {
                warnings.push(e.to_string());
                None
            }
            Err(e) => return Err(e),
        };
        let generation_ms = t1.elapsed().as_secs_f64() * 1e3;
        Ok(RagOutput {
            frames_sent: request.frames.len(),
            latency: StageLatency {
                retrieval_ms,
                generation_ms,
                ttft_ms: response.as_ref().and_then(|r| r.ttft_ms),
                total_ms: t0.elapsed().as_secs_f64() * 1e3,
            },
            hits,
            response,
            warnings,
        })
    }
}

impl QaSystem for RagPipeline {
    fn answer(&self, sample: &QaSample) -> Result<SystemOutput, SystemError> {
        if self.frames.manifest(&sample.video_id).is_err() {
            return Err(SystemError::MissingVideo(sample.video_id.clone()));
        }
        let filter = SearchFilter::video(sample.video_id.clone());
        let out = self
            .run(&sample.query, Some(&filter), Some(sample))
            .map_err(|e| SystemError::Failed(e.to_string()))?;
        let prediction = match &out.response {
            Some(r) => Prediction {
                sample_id: sample.sample_id.clone(),
                chosen_index: r.chosen_index,
                predicted_intervals: r.intervals.clone(),
                raw_response: r.raw.clone(),
            },
            None => Prediction {
                sample_id: sample.sample_id.clone(),
                chosen_index: None,
                predicted_intervals: Default::default(),
                raw_response: String::new(),
            },
        };
        Ok(SystemOutput {
            prediction,
            hits: out.hits,
            latency: Some(out.latency),
            frames_sent: out.frames_sent,
            warnings: out.warnings,
        })
    }
}
