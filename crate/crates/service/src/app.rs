//! Service state and the operations behind both the HTTP routes and the
//! CLI. Everything here is blocking; the HTTP layer moves it off the
//! async workers.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use foresearch_core::answer::{AnswerError, GroundingMode, RagPipeline, VlmBackend};
use foresearch_core::encoder::{sample_frames, EncoderBackend, EncoderGateway};
use foresearch_core::eval::{
    load_predictions, load_samples_file, run_benchmark, EvalConfig, EvalReport, PredictionSource, StageLatency,
};
use foresearch_core::frames::{self, FrameSource, VideoManifest};
use foresearch_core::ingest::{prepare_video, replace_video};
use foresearch_core::vecindex::{IndexError, SearchFilter, SearchHit, SharedIndex, VecIndex};
use foresearch_core::{Clip, ClipMode, Detection, FrameBox, ImageRef, IntervalSet, QaSample, Query, Subtask, TimeInterval};
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clients::{encoder_backend, vlm_backend};
use crate::config::ServiceConfig;
use crate::jobs::{Job, JobKind, JobStatus, JobStore};
use crate::registry::{Claim, VideoRegistry, VideoState};
use crate::review::ReviewStore;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    /// A model server could not be reached.
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Internal(String),
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Internal(e.to_string())
    }
}

const ID_SET: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.');

/// Percent-encodes an id for use as one URL path segment or file name.
pub fn encode_id(id: &str) -> String {
    utf8_percent_encode(id, ID_SET).to_string()
}

pub fn thumbnail_uri(clip_id: &str) -> String {
    format!("/v1/clips/{}/thumbnail", encode_id(clip_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestRequest {
    pub manifest: VideoManifest,
    /// Detections as JSON lines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections_path: Option<PathBuf>,
}

impl IngestRequest {
    pub fn detections_text(&self) -> Result<String, AppError> {
        match (&self.detections, &self.detections_path) {
            (Some(t), None) => Ok(t.clone()),
            (None, Some(p)) => std::fs::read_to_string(p)
                .map_err(|e| AppError::Input(format!("cannot read detections {}: {e}", p.display()))),
            _ => Err(AppError::Input("give exactly one of `detections` and `detections_path`".into())),
        }
    }
}

/// Parses JSON-lines detections; errors name the 1-based line.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>, AppError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let d: Detection =
            serde_json::from_str(line).map_err(|e| AppError::Input(format!("detections line {}: {e}", n + 1)))?;
        out.push(d);
    }
    Ok(out)
}

fn validate_manifest(m: &VideoManifest) -> Result<(), AppError> {
    if m.video_id.trim().is_empty() || m.camera_id.trim().is_empty() {
        return Err(AppError::Input("manifest needs video_id and camera_id".into()));
    }
    if !(m.fps.is_finite() && m.fps > 0.0 && m.duration_seconds.is_finite() && m.duration_seconds > 0.0) {
        return Err(AppError::Input("manifest fps and duration must be positive".into()));
    }
    Ok(())
}

fn content_hash(manifest: &VideoManifest, detections: &[Detection]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(manifest).expect("manifest serializes"));
    for d in detections {
        h.update(serde_json::to_vec(d).expect("detection serializes"));
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first: Option<FrameBox>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last: Option<FrameBox>,
}

impl BoxSummary {
    fn of(clip: &Clip) -> Self {
        Self {
            count: clip.boxes.len(),
            first: clip.boxes.first().cloned(),
            last: clip.boxes.last().cloned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipView {
    pub clip_id: String,
    pub video_id: String,
    pub camera_id: String,
    pub span: TimeInterval,
    pub mode: ClipMode,
    pub frame_count: u32,
    pub boxes: BoxSummary,
    pub thumbnail: String,
}

impl ClipView {
    pub fn of(clip: &Clip) -> Self {
        Self {
            clip_id: clip.clip_id.clone(),
            video_id: clip.video_id.clone(),
            camera_id: clip.camera_id.clone(),
            span: clip.span,
            mode: clip.mode,
            frame_count: clip.frame_count,
            boxes: BoxSummary::of(clip),
            thumbnail: thumbnail_uri(&clip.clip_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitView {
    pub rank: usize,
    pub score: f32,
    #[serde(flatten)]
    pub clip: ClipView,
}

fn hit_views(hits: &[SearchHit]) -> Vec<HitView> {
    hits.iter()
        .enumerate()
        .map(|(i, h)| HitView {
            rank: i + 1,
            score: h.score,
            clip: ClipView::of(&h.clip),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub text: String,
    #[serde(default)]
    pub image_base64: Option<String>,
    #[serde(default)]
    pub video_id: Option<String>,
    #[serde(default)]
    pub camera_id: Option<String>,
    #[serde(default)]
    pub time_range: Option<TimeInterval>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub mode: Option<GroundingMode>,
    #[serde(default)]
    pub answer: bool,
    /// Answer options for a multiple-choice question.
    #[serde(default)]
    pub options: Vec<String>,
    #[serde(default)]
    pub sample_id: Option<String>,
}

pub const DEFAULT_K: usize = 5;
pub const MAX_K: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerView {
    pub summary: Option<String>,
    /// 0-based index into the request's options.
    pub answer: Option<usize>,
    pub answer_text: Option<String>,
    pub intervals: IntervalSet,
    /// The hits whose frames the VLM saw.
    pub evidence: Vec<HitView>,
    pub parsed: bool,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub hits: Vec<HitView>,
    pub answer: Option<AnswerView>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub frames_sent: usize,
    pub latency: StageLatency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRequest {
    pub benchmark: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    #[serde(default)]
    pub config: EvalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<GroundingMode>,
}

fn answer_error(e: AnswerError) -> AppError {
    match e {
        AnswerError::Encoder(e) if e.is_retriable() => AppError::Backend(e.to_string()),
        AnswerError::VlmUnavailable(m) => AppError::Backend(m),
        e @ (AnswerError::Encoder(_) | AnswerError::Query(_) | AnswerError::InvalidMode(_)) => {
            AppError::Input(e.to_string())
        }
        e => AppError::Internal(e.to_string()),
    }
}

pub struct App {
    pub cfg: ServiceConfig,
    pub index: Arc<SharedIndex>,
    pub registry: Arc<VideoRegistry>,
    pub gateway: Arc<EncoderGateway>,
    pub vlm: Arc<dyn VlmBackend>,
    pub jobs: JobStore,
    pub review: ReviewStore,
    thumbs_dir: PathBuf,
    save_lock: Mutex<()>,
    video_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl App {
    /// Opens the data directory with backends built from the config.
    pub fn open(cfg: ServiceConfig) -> Result<App, AppError> {
        let enc = encoder_backend(&cfg).map_err(|e| AppError::Input(e.to_string()))?;
        let vlm = vlm_backend(&cfg).map_err(|e| AppError::Input(e.to_string()))?;
        Self::with_backends(cfg, enc, vlm)
    }

    pub fn with_backends(
        cfg: ServiceConfig,
        encoder: Arc<dyn EncoderBackend>,
        vlm: Arc<dyn VlmBackend>,
    ) -> Result<App, AppError> {
        cfg.prepare_dirs().map_err(|e| AppError::Input(e.to_string()))?;
        let index_path = cfg.index_path();
        let index = if index_path.exists() {
            let ix = VecIndex::load(&index_path).map_err(|e| AppError::Internal(e.to_string()))?;
            if ix.dimension() != cfg.encoder.dimension {
                return Err(AppError::Input(format!(
                    "index {} has dimension {}, encoder profile says {}",
                    index_path.display(),
                    ix.dimension(),
                    cfg.encoder.dimension
                )));
            }
            ix
        } else {
            VecIndex::new(cfg.encoder.dimension)
        };
        let thumbs_dir = cfg.data_dir.join("thumbnails");
        std::fs::create_dir_all(&thumbs_dir)?;
        let qa_dir = cfg.qa_work_dir();
        std::fs::create_dir_all(&qa_dir)?;
        Ok(App {
            index: Arc::new(SharedIndex::new(index)),
            registry: Arc::new(VideoRegistry::open(&cfg.data_dir.join("videos.json"))?),
            gateway: Arc::new(EncoderGateway::new(encoder, cfg.encoder.clone())),
            vlm,
            jobs: JobStore::open(&cfg.data_dir.join("jobs.jsonl"))?,
            review: ReviewStore::new(&qa_dir),
            thumbs_dir,
            save_lock: Mutex::new(()),
            video_locks: Mutex::default(),
            cfg,
        })
    }

    pub fn pipeline(&self, mode: GroundingMode) -> RagPipeline {
        let mut p = RagPipeline::new(
            self.gateway.clone(),
            self.index.clone(),
            self.registry.clone(),
            self.vlm.clone(),
        );
        p.mode = mode;
        p
    }

    pub fn save_index(&self) -> Result<(), AppError> {
        let _g = self.save_lock.lock().expect("save lock");
        self.index
            .snapshot()
            .save(&self.cfg.index_path())
            .map_err(|e| AppError::Internal(format!("saving index: {e}")))
    }

    pub fn thumbnail_path(&self, clip_id: &str) -> PathBuf {
        self.thumbs_dir.join(format!("{}.png", encode_id(clip_id)))
    }

    /// First frame the encoder samples from the clip, with its box drawn.
    fn render_thumbnail(&self, clip: &Clip) -> Result<(), AppError> {
        let Some(&first) = sample_frames(clip.frames.len(), self.cfg.encoder.frame_budget).first() else {
            return Ok(());
        };
        let idx = clip.frames[first];
        let frame = self
            .registry
            .frame(&clip.video_id, idx)
            .map_err(|e| AppError::Internal(e.to_string()))?;
        let frame = match clip.box_at(idx) {
            Some(b) => frames::overlay(&frame, b).map_err(|e| AppError::Internal(e.to_string()))?,
            None => frame,
        };
        std::fs::write(self.thumbnail_path(&clip.clip_id), frame.data)?;
        Ok(())
    }

    /// Validates and registers an ingestion. Returns the job and whether it
    /// still has to run.
    pub fn submit_ingest(&self, req: &IngestRequest) -> Result<(Job, bool), AppError> {
        validate_manifest(&req.manifest)?;
        let text = req.detections_text()?;
        let detections = parse_detections(&text)?;
        if let Some(d) = detections.iter().find(|d| d.video_id != req.manifest.video_id) {
            return Err(AppError::Input(format!(
                "detection for video `{}` in the ingestion of `{}`",
                d.video_id, req.manifest.video_id
            )));
        }
        let hash = content_hash(&req.manifest, &detections);
        let claim = self.registry.claim(&req.manifest, &hash, |id| self.jobs.is_active(id))?;
        match claim {
            Claim::Conflict => Err(AppError::Conflict(format!(
                "video `{}` is already registered with different content",
                req.manifest.video_id
            ))),
            Claim::Existing(Some(id)) if self.jobs.get(&id).is_some() => {
                Ok((self.jobs.get(&id).expect("job exists"), false))
            }
            Claim::Existing(_) => {
                // ingested outside the job system, e.g. by the CLI
                let e = self.registry.get(&req.manifest.video_id).expect("claimed entry");
                let job = self.jobs.create(JobKind::Ingest, serde_json::json!({"video_id": e.manifest.video_id}));
                self.jobs.complete(&job.id, serde_json::json!({"video_id": e.manifest.video_id, "tracks": e.tracks, "clips": e.clips}));
                self.registry.update(&e.manifest.video_id, |x| x.job_id = Some(job.id.clone()))?;
                Ok((self.jobs.get(&job.id).expect("job exists"), false))
            }
            Claim::Claimed => {
                let input = IngestRequest {
                    manifest: req.manifest.clone(),
                    detections: Some(text),
                    detections_path: None,
                };
                let job = self.jobs.create(JobKind::Ingest, serde_json::to_value(&input).expect("request serializes"));
                self.registry.update(&req.manifest.video_id, |e| e.job_id = Some(job.id.clone()))?;
                Ok((job, true))
            }
        }
    }

    fn video_lock(&self, video_id: &str) -> Arc<Mutex<()>> {
        self.video_locks
            .lock()
            .expect("video locks")
            .entry(video_id.to_string())
            .or_default()
            .clone()
    }

    /// Runs an ingestion job to completion or failure, retrying while the
    /// encoder is unavailable.
    pub fn run_ingest(&self, job_id: &str) -> Result<(), AppError> {
        let job = self.jobs.get(job_id).ok_or_else(|| AppError::NotFound(job_id.to_string()))?;
        let req: IngestRequest =
            serde_json::from_value(job.input.clone()).map_err(|e| AppError::Internal(format!("job input: {e}")))?;
        let detections = parse_detections(&req.detections_text()?)?;
        let video_id = req.manifest.video_id.clone();
        let lock = self.video_lock(&video_id);
        let _one_per_video = lock.lock().expect("video lock");
        let attempts = self.cfg.workers.job_attempts;
        let mut attempt = job.attempts;
        let outcome = loop {
            attempt += 1;
            self.jobs.update(job_id, |j| {
                j.attempts = attempt;
                j.status = JobStatus::Running;
                j.stage = Some("embedding".into());
            });
            match prepare_video(&video_id, &detections, self.registry.as_ref(), &self.gateway, &self.cfg.ingest) {
                Ok(v) => break Ok(v),
                Err(e) if e.is_retriable() && attempt < attempts => {
                    tracing::warn!(job = job_id, attempt, error = %e, "ingestion retrying");
                    self.jobs.update(job_id, |j| {
                        j.status = JobStatus::Retrying;
                        j.error = Some(e.to_string());
                    });
                    std::thread::sleep(Duration::from_millis(self.cfg.workers.job_retry_delay_ms * attempt as u64));
                }
                Err(e) => break Err(e),
            }
        };
        let result = outcome
            .map_err(|e| AppError::Backend(e.to_string()))
            .and_then(|(batch, summary)| {
                self.jobs.set_stage(job_id, "thumbnails");
                for (_, clip) in &batch {
                    self.render_thumbnail(clip)?;
                }
                self.jobs.set_stage(job_id, "indexing");
                replace_video(&self.index, &video_id, batch).map_err(|e: IndexError| AppError::Internal(e.to_string()))?;
                self.save_index()?;
                Ok(summary)
            });
        match result {
            Ok(summary) => {
                self.registry.update(&video_id, |e| {
                    e.state = VideoState::Ready;
                    e.tracks = summary.tracks;
                    e.clips = summary.clips;
                })?;
                self.jobs.complete(job_id, serde_json::to_value(&summary).expect("summary serializes"));
                tracing::info!(job = job_id, video = %video_id, tracks = summary.tracks, clips = summary.clips, "ingested");
                Ok(())
            }
            Err(e) => {
                self.registry.update(&video_id, |x| x.state = VideoState::Failed)?;
                self.jobs.fail(job_id, e.to_string());
                tracing::error!(job = job_id, video = %video_id, error = %e, "ingestion failed");
                Err(e)
            }
        }
    }

    /// Ingests synchronously (the CLI path).
    pub fn ingest(&self, req: &IngestRequest) -> Result<Job, AppError> {
        let (job, fresh) = self.submit_ingest(req)?;
        if fresh {
            self.run_ingest(&job.id)?;
        }
        Ok(self.jobs.get(&job.id).expect("job exists"))
    }

    pub fn clips_of(&self, video_id: &str) -> Result<Vec<ClipView>, AppError> {
        if self.registry.get(video_id).is_none() {
            return Err(AppError::NotFound(format!("unknown video `{video_id}`")));
        }
        let snap = self.index.snapshot();
        let mut clips: Vec<ClipView> = snap.clips().filter(|c| c.video_id == video_id).map(ClipView::of).collect();
        clips.sort_by(|a, b| a.span.start().total_cmp(&b.span.start()).then(a.clip_id.cmp(&b.clip_id)));
        Ok(clips)
    }

    pub fn thumbnail(&self, clip_id: &str) -> Result<Vec<u8>, AppError> {
        if !self.index.snapshot().contains(clip_id) {
            return Err(AppError::NotFound(format!("unknown clip `{clip_id}`")));
        }
        std::fs::read(self.thumbnail_path(clip_id))
            .map_err(|_| AppError::NotFound(format!("no thumbnail for clip `{clip_id}`")))
    }

    pub fn query(&self, req: &QueryRequest) -> Result<QueryResponse, AppError> {
        let k = req.k.unwrap_or(DEFAULT_K);
        if k == 0 || k > MAX_K {
            return Err(AppError::Input(format!("k must lie in 1..={MAX_K}")));
        }
        let query = match &req.image_base64 {
            Some(b) => {
                let bytes = B64
                    .decode(b.trim())
                    .map_err(|e| AppError::Input(format!("image_base64: {e}")))?;
                frames::decode_rgb(&bytes).map_err(|e| AppError::Input(format!("image_base64: {e}")))?;
                Query::image_text(ImageRef::Bytes(bytes), req.text.clone())
            }
            None => Query::text(req.text.clone()),
        }
        .map_err(|e| AppError::Input(e.to_string()))?;
        if let Some(v) = &req.video_id {
            if self.registry.get(v).is_none() {
                return Err(AppError::NotFound(format!("unknown video `{v}`")));
            }
        }
        let filter = SearchFilter {
            video_id: req.video_id.clone(),
            camera_id: req.camera_id.clone(),
            time_range: req.time_range,
        };
        let mode = req.mode.clone().unwrap_or_else(|| self.cfg.grounding.clone());
        let mut warnings = Vec::new();
        if self.index.snapshot().is_empty() {
            warnings.push("the index is empty".to_string());
        }

        let resp = if req.answer {
            let mut pipeline = self.pipeline(mode.clone());
            pipeline.log_depth = k;
            let pseudo = (!req.options.is_empty() || req.sample_id.is_some()).then(|| QaSample {
                sample_id: req.sample_id.clone().unwrap_or_default(),
                video_id: req.video_id.clone().unwrap_or_default(),
                subtask: if req.options.len() == 2 { Subtask::SE } else { Subtask::AC },
                query: query.clone(),
                options: req.options.clone(),
                // unknown to the service and unused when assembling
                answer_index: 0,
                ground_truth: IntervalSet::default(),
                is_negative: false,
            });
            let out = pipeline
                .run(&query, Some(&filter), pseudo.as_ref())
                .map_err(answer_error)?;
            let hits = hit_views(&out.hits[..out.hits.len().min(k)]);
            warnings.extend(out.warnings);
            let answer = out.response.map(|r| AnswerView {
                answer_text: r.chosen_index.and_then(|i| req.options.get(i).cloned()),
                summary: r.summary,
                answer: r.chosen_index,
                intervals: r.intervals,
                evidence: hits[..hits.len().min(mode.top_k)].to_vec(),
                parsed: r.parsed,
                raw: r.raw,
            });
            QueryResponse {
                hits,
                answer,
                warnings,
                frames_sent: out.frames_sent,
                latency: out.latency,
            }
        } else {
            let t0 = Instant::now();
            let hits = self.pipeline(mode).retrieve(&query, k, Some(&filter)).map_err(answer_error)?;
            let ms = t0.elapsed().as_secs_f64() * 1e3;
            QueryResponse {
                hits: hit_views(&hits),
                answer: None,
                warnings,
                frames_sent: 0,
                latency: StageLatency {
                    retrieval_ms: ms,
                    generation_ms: 0.0,
                    ttft_ms: None,
                    total_ms: ms,
                },
            }
        };
        tracing::info!(
            target: "foresearch::latency",
            retrieval_ms = resp.latency.retrieval_ms,
            generation_ms = resp.latency.generation_ms,
            total_ms = resp.latency.total_ms,
            hits = resp.hits.len(),
            answered = resp.answer.is_some(),
            "query"
        );
        Ok(resp)
    }

    fn check_eval(&self, req: &EvalRequest) -> Result<(), AppError> {
        for p in std::iter::once(&req.benchmark).chain(req.predictions.as_ref()) {
            if !p.is_file() {
                return Err(AppError::NotFound(format!("no such file {}", p.display())));
            }
        }
        req.config.validate().map_err(|e| AppError::Input(e.to_string()))?;
        if let Some(m) = &req.mode {
            m.validate().map_err(|e| AppError::Input(e.to_string()))?;
        }
        Ok(())
    }

    /// Scores a benchmark against a predictions file, or against the live
    /// stack when none is given.
    pub fn evaluate(&self, req: &EvalRequest) -> Result<EvalReport, AppError> {
        self.check_eval(req)?;
        let (samples, issues) = load_samples_file(&req.benchmark)
            .map_err(|e| AppError::Input(format!("{}: {e}", req.benchmark.display())))?;
        for i in &issues {
            tracing::warn!(file = %req.benchmark.display(), line = i.line, "{}", i.message);
        }
        let report = match &req.predictions {
            Some(p) => {
                let f = File::open(p).map_err(|e| AppError::Input(format!("{}: {e}", p.display())))?;
                let (preds, bad) = load_predictions(BufReader::new(f)).map_err(|e| AppError::Input(e.to_string()))?;
                for i in &bad {
                    tracing::warn!(file = %p.display(), line = i.line, "{}", i.message);
                }
                run_benchmark(&samples, PredictionSource::Predictions(&preds), &req.config, issues.len())
            }
            None => {
                let pipeline = self.pipeline(req.mode.clone().unwrap_or_else(|| self.cfg.grounding.clone()));
                run_benchmark(&samples, PredictionSource::System(&pipeline), &req.config, issues.len())
            }
        };
        report.map_err(|e| AppError::Input(e.to_string()))
    }

    pub fn submit_eval(&self, req: &EvalRequest) -> Result<Job, AppError> {
        self.check_eval(req)?;
        Ok(self.jobs.create(JobKind::Eval, serde_json::to_value(req).expect("request serializes")))
    }

    pub fn run_eval(&self, job_id: &str) -> Result<(), AppError> {
        let job = self.jobs.get(job_id).ok_or_else(|| AppError::NotFound(job_id.to_string()))?;
        let req: EvalRequest =
            serde_json::from_value(job.input).map_err(|e| AppError::Internal(format!("job input: {e}")))?;
        self.jobs.update(job_id, |j| {
            j.status = JobStatus::Running;
            j.attempts += 1;
        });
        match self.evaluate(&req) {
            Ok(report) => {
                self.jobs.complete(job_id, serde_json::to_value(&report).expect("report serializes"));
                Ok(())
            }
            Err(e) => {
                self.jobs.fail(job_id, e.to_string());
                Err(e)
            }
        }
    }

    pub fn run_job(&self, job_id: &str) -> Result<(), AppError> {
        match self.jobs.get(job_id).map(|j| j.kind) {
            Some(JobKind::Ingest) => self.run_ingest(job_id),
            Some(JobKind::Eval) => self.run_eval(job_id),
            None => Err(AppError::NotFound(job_id.to_string())),
        }
    }

    pub fn data_dir(&self) -> &Path {
        &self.cfg.data_dir
    }
}
