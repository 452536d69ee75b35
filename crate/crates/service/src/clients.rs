//! Blocking HTTP clients for the encoder and VLM model servers, and the
//! factory that turns configured endpoints into backends.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use foresearch_core::answer::mock::MockVlm;
use foresearch_core::answer::{AnswerError, VlmBackend, VlmReply, VlmRequest, WireResponse};
use foresearch_core::encoder::mock::{MockEncoder, MockEncoderConfig, Palette};
use foresearch_core::encoder::{EncodeRequest, EncodeResponse, EncoderBackend, EncoderError};
use foresearch_core::eval::load_samples_file;
use foresearch_core::qa::{ModelClient, VlmModelClient};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::ServiceConfig;

enum CallError {
    /// Transport failure, timeout, 5xx or 429: worth retrying.
    Transient(String),
    Rejected(String),
}

fn agent(timeout_ms: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn post_json<B: Serialize, R: DeserializeOwned>(agent: &ureq::Agent, url: &str, body: &B) -> Result<R, CallError> {
    let mut resp = agent
        .post(url)
        .send_json(body)
        .map_err(|e| CallError::Transient(format!("{url}: {e}")))?;
    let status = resp.status();
    if status.is_server_error() || status.as_u16() == 429 {
        return Err(CallError::Transient(format!("{url}: HTTP {status}")));
    }
    if !status.is_success() {
        let detail = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(CallError::Rejected(format!("{url}: HTTP {status} {detail}")));
    }
    resp.body_mut()
        .with_config()
        .limit(64 << 20)
        .read_json()
        .map_err(|e| CallError::Rejected(format!("{url}: bad response body: {e}")))
}

fn join(base: &str, path: &str) -> String {
    format!("{}/{path}", base.trim_end_matches('/'))
}

/// `POST {endpoint}/encode`.
pub struct HttpEncoder {
    agent: ureq::Agent,
    url: String,
}

impl HttpEncoder {
    pub fn new(endpoint: &str, timeout_ms: u64) -> Self {
        Self {
            agent: agent(timeout_ms),
            url: join(endpoint, "encode"),
        }
    }
}

impl EncoderBackend for HttpEncoder {
    fn encode(&self, request: &EncodeRequest) -> Result<Vec<f32>, EncoderError> {
        match post_json::<_, EncodeResponse>(&self.agent, &self.url, request) {
            Ok(r) => Ok(r.vector),
            Err(CallError::Transient(m)) => Err(EncoderError::Unavailable(m)),
            Err(CallError::Rejected(m)) => Err(EncoderError::InvalidRequest(m)),
        }
    }
}

/// `POST {endpoint}/generate`.
pub struct HttpVlm {
    agent: ureq::Agent,
    url: String,
}

impl HttpVlm {
    pub fn new(endpoint: &str, timeout_ms: u64) -> Self {
        Self {
            agent: agent(timeout_ms),
            url: join(endpoint, "generate"),
        }
    }
}

impl VlmBackend for HttpVlm {
    fn generate(&self, request: &VlmRequest) -> Result<VlmReply, AnswerError> {
        match post_json::<_, WireResponse>(&self.agent, &self.url, &request.to_wire()) {
            Ok(r) => Ok(VlmReply { text: r.text, ttft: None }),
            // a rejected request will not succeed on retry, but the caller
            // still only sees "no answer"
            Err(CallError::Transient(m) | CallError::Rejected(m)) => Err(AnswerError::VlmUnavailable(m)),
        }
    }
}

/// Stand-in when no VLM endpoint is configured.
pub struct NoVlm;

impl VlmBackend for NoVlm {
    fn generate(&self, _: &VlmRequest) -> Result<VlmReply, AnswerError> {
        Err(AnswerError::VlmUnavailable("no VLM endpoint configured".into()))
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct BackendSetupError(pub String);

pub fn load_palette(path: &Path) -> Result<Palette, BackendSetupError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BackendSetupError(format!("cannot read palette {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| BackendSetupError(format!("bad palette {}: {e}", path.display())))
}

pub fn encoder_backend(cfg: &ServiceConfig) -> Result<Arc<dyn EncoderBackend>, BackendSetupError> {
    if cfg.encoder.endpoint.starts_with("mock://") {
        let palette = match &cfg.mock_encoder.palette {
            Some(p) => load_palette(p)?,
            None => Palette::default(),
        };
        return Ok(Arc::new(MockEncoder::new(MockEncoderConfig {
            seed: cfg.mock_encoder.seed,
            dimension: cfg.encoder.dimension,
            noise: cfg.mock_encoder.noise,
            palette,
            ..Default::default()
        })));
    }
    Ok(Arc::new(HttpEncoder::new(&cfg.encoder.endpoint, cfg.encoder.timeout_ms)))
}

pub fn mock_vlm(benchmark: Option<&Path>, fidelity: f64, seed: u64) -> Result<MockVlm, BackendSetupError> {
    let samples = match benchmark {
        Some(p) => {
            load_samples_file(p)
                .map_err(|e| BackendSetupError(format!("cannot read benchmark {}: {e}", p.display())))?
                .0
        }
        None => Vec::new(),
    };
    Ok(MockVlm::from_samples(&samples, fidelity, seed))
}

fn vlm_for(endpoint: Option<&str>, cfg: &ServiceConfig) -> Result<Arc<dyn VlmBackend>, BackendSetupError> {
    Ok(match endpoint {
        None => Arc::new(NoVlm),
        Some(ep) if ep.starts_with("mock://") => Arc::new(mock_vlm(
            cfg.mock_vlm.benchmark.as_deref(),
            cfg.mock_vlm.fidelity,
            cfg.mock_vlm.seed,
        )?),
        Some(ep) => Arc::new(HttpVlm::new(ep, cfg.vlm_timeout_ms)),
    })
}

pub fn vlm_backend(cfg: &ServiceConfig) -> Result<Arc<dyn VlmBackend>, BackendSetupError> {
    vlm_for(cfg.vlm_endpoint.as_deref(), cfg)
}

pub type ModelPair = (Arc<dyn ModelClient>, Arc<dyn ModelClient>);

/// Text and multimodal model clients for the data engine, reached through
/// the same generate contract as the VLM. Each falls back to the VLM
/// endpoint when not set.
pub fn qa_clients(cfg: &ServiceConfig) -> Result<ModelPair, BackendSetupError> {
    let client = |ep: Option<&String>| -> Result<Arc<dyn ModelClient>, BackendSetupError> {
        let ep = ep.or(cfg.vlm_endpoint.as_ref());
        if ep.is_none() {
            return Err(BackendSetupError("no model endpoint configured for the data engine".into()));
        }
        Ok(Arc::new(VlmModelClient {
            backend: vlm_for(ep.map(String::as_str), cfg)?,
            model_id: cfg.qa.model_id.clone(),
        }))
    };
    Ok((client(cfg.qa.llm_endpoint.as_ref())?, client(cfg.qa.lmm_endpoint.as_ref())?))
}
