//! Model clients for the data engine. Text and multimodal models share one
//! contract: a prompt id, the prompt text and zero or more images in, the
//! reply text out.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{sha256_hex, QaError};
use crate::answer::{AnswerError, TimedFrame, VlmBackend, VlmRequest};
use crate::encoder::ImageBytes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub prompt_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageBytes>,
}

/// Key under which a request is recorded: SHA-256 of its JSON encoding.
pub fn request_key(req: &ModelRequest) -> String {
    sha256_hex(&serde_json::to_vec(req).expect("request serializes"))
}

pub trait ModelClient: Send + Sync {
    /// Identifier written into candidate provenance.
    fn model_id(&self) -> String;
    fn complete(&self, request: &ModelRequest) -> Result<String, QaError>;
}

impl<T: ModelClient + ?Sized> ModelClient for Arc<T> {
    fn model_id(&self) -> String {
        (**self).model_id()
    }
    fn complete(&self, request: &ModelRequest) -> Result<String, QaError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub key: String,
    pub prompt_id: String,
    pub response: String,
}

/// Answers from a recorded request → response map; unknown requests fail
/// as if the model were down.
pub struct ReplayClient {
    model_id: String,
    responses: HashMap<String, String>,
}

impl ReplayClient {
    pub fn new(model_id: impl Into<String>, recordings: impl IntoIterator<Item = Recording>) -> Self {
        Self {
            model_id: model_id.into(),
            responses: recordings.into_iter().map(|r| (r.key, r.response)).collect(),
        }
    }

    pub fn from_file(model_id: impl Into<String>, path: &Path) -> Result<Self, QaError> {
        let io = |source| QaError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut recs = Vec::new();
        for (n, line) in BufReader::new(File::open(path).map_err(io)?).lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let r: Recording = serde_json::from_str(&line)
                .map_err(|e| QaError::InvalidInput(format!("{}:{}: {e}", path.display(), n + 1)))?;
            recs.push(r);
        }
        Ok(Self::new(model_id, recs))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ModelClient for ReplayClient {
    fn model_id(&self) -> String {
        self.model_id.clone()
    }

    fn complete(&self, request: &ModelRequest) -> Result<String, QaError> {
        let key = request_key(request);
        self.responses
            .get(&key)
            .cloned()
            .ok_or_else(|| QaError::Unavailable(format!("no recording for {} request {key}", request.prompt_id)))
    }
}

/// Passes requests through and remembers every exchange.
pub struct RecordingClient<C> {
    inner: C,
    log: Mutex<BTreeMap<String, Recording>>,
}

impl<C: ModelClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            log: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn recordings(&self) -> Vec<Recording> {
        self.log.lock().expect("recording lock").values().cloned().collect()
    }

    /// Writes the recordings as JSON lines, sorted by key.
    pub fn save(&self, path: &Path) -> Result<(), QaError> {
        let io = |source| QaError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = File::create(path).map_err(io)?;
        for r in self.recordings() {
            writeln!(f, "{}", serde_json::to_string(&r).expect("recording serializes")).map_err(io)?;
        }
        Ok(())
    }
}

impl<C: ModelClient> ModelClient for RecordingClient<C> {
    fn model_id(&self) -> String {
        self.inner.model_id()
    }

    fn complete(&self, request: &ModelRequest) -> Result<String, QaError> {
        let response = self.inner.complete(request)?;
        let key = request_key(request);
        self.log.lock().expect("recording lock").insert(
            key.clone(),
            Recording {
                key,
                prompt_id: request.prompt_id.clone(),
                response: response.clone(),
            },
        );
        Ok(response)
    }
}

/// Adapts a VLM backend (for example the HTTP generate endpoint) to the
/// model-client contract.
pub struct VlmModelClient {
    pub backend: Arc<dyn VlmBackend>,
    pub model_id: String,
}

impl ModelClient for VlmModelClient {
    fn model_id(&self) -> String {
        self.model_id.clone()
    }

    fn complete(&self, request: &ModelRequest) -> Result<String, QaError> {
        let req = VlmRequest {
            system_prompt: String::new(),
            user_text: request.text.clone(),
            query_image: None,
            frames: request
                .images
                .iter()
                .map(|i| TimedFrame {
                    timestamp: 0.0,
                    image: i.clone(),
                    clip_id: None,
                })
                .collect(),
            sample_id: None,
            options: Vec::new(),
            warnings: Vec::new(),
        };
        match self.backend.generate(&req) {
            Ok(r) => Ok(r.text),
            Err(AnswerError::VlmUnavailable(m)) => Err(QaError::Unavailable(m)),
            Err(e) => Err(QaError::Unavailable(e.to_string())),
        }
    }
}
