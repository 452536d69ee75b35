use std::path::{Path, PathBuf};

use foresearch_core::answer::GroundingMode;
use foresearch_core::encoder::EncoderProfile;
use foresearch_core::ingest::IngestConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Settings for the in-process mock encoder (`mock://` endpoint).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockEncoderSettings {
    pub seed: u64,
    pub noise: f64,
    /// JSON label → colour table shared with the synthetic corpus.
    pub palette: Option<PathBuf>,
}

impl Default for MockEncoderSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            noise: 0.0,
            palette: None,
        }
    }
}

/// Settings for the in-process mock VLM (`mock://` endpoint).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockVlmSettings {
    /// Benchmark whose answers the mock knows.
    pub benchmark: Option<PathBuf>,
    pub fidelity: f64,
    pub seed: u64,
}

impl Default for MockVlmSettings {
    fn default() -> Self {
        Self {
            benchmark: None,
            fidelity: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Workers {
    /// Ingestion jobs running at once (different videos).
    pub ingest: usize,
    pub eval: usize,
    /// Attempts per ingestion job before it is marked failed.
    pub job_attempts: u32,
    pub job_retry_delay_ms: u64,
}

impl Default for Workers {
    fn default() -> Self {
        Self {
            ingest: 2,
            eval: 2,
            job_attempts: 3,
            job_retry_delay_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaSettings {
    /// Defaults to `<data_dir>/qa`.
    pub work_dir: Option<PathBuf>,
    pub llm_endpoint: Option<String>,
    pub lmm_endpoint: Option<String>,
    pub model_id: String,
}

impl Default for QaSettings {
    fn default() -> Self {
        Self {
            work_dir: None,
            llm_endpoint: None,
            lmm_endpoint: None,
            model_id: "remote".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    /// Defaults to `<data_dir>/index.fsea`.
    pub index_path: Option<PathBuf>,
    pub encoder: EncoderProfile,
    pub mock_encoder: MockEncoderSettings,
    /// `None` runs search-only: answer requests come back with a warning.
    pub vlm_endpoint: Option<String>,
    pub vlm_timeout_ms: u64,
    pub mock_vlm: MockVlmSettings,
    pub grounding: GroundingMode,
    pub ingest: IngestConfig,
    /// Static bearer token required on every `/v1` route when set.
    pub auth_token: Option<String>,
    pub workers: Workers,
    pub qa: QaSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("foresearch-data"),
            index_path: None,
            encoder: EncoderProfile::default(),
            mock_encoder: MockEncoderSettings::default(),
            vlm_endpoint: None,
            vlm_timeout_ms: 120_000,
            mock_vlm: MockVlmSettings::default(),
            grounding: GroundingMode::default(),
            ingest: IngestConfig::default(),
            auth_token: None,
            workers: Workers::default(),
            qa: QaSettings::default(),
        }
    }
}

const ENV_PREFIX: &str = "FORESEARCH_";

impl ServiceConfig {
    /// Reads a TOML or YAML file (by extension; TOML when unknown).
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |message: String| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        };
        match path.extension().and_then(|e| e.to_str()) {
            Some("yaml" | "yml") => serde_yaml::from_str(&text).map_err(|e| parse_err(e.to_string())),
            Some("json") => serde_json::from_str(&text).map_err(|e| parse_err(e.to_string())),
            _ => toml::from_str(&text).map_err(|e| parse_err(e.to_string())),
        }
    }

    /// File (if any), then `FORESEARCH_*` overrides from the process
    /// environment, then validation.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (name, value) in vars {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let num = |v: &str| {
                v.parse::<u64>().map_err(|e| ConfigError::Env {
                    name: name.clone(),
                    message: e.to_string(),
                })
            };
            match key {
                "LISTEN" => self.listen = value,
                "DATA_DIR" => self.data_dir = value.into(),
                "INDEX_PATH" => self.index_path = Some(value.into()),
                "ENCODER_ENDPOINT" => self.encoder.endpoint = value,
                "ENCODER_DIMENSION" => self.encoder.dimension = num(&value)? as usize,
                "VLM_ENDPOINT" => self.vlm_endpoint = Some(value).filter(|v| !v.is_empty()),
                "AUTH_TOKEN" => self.auth_token = Some(value).filter(|v| !v.is_empty()),
                "WORKERS_INGEST" => self.workers.ingest = num(&value)? as usize,
                "WORKERS_EVAL" => self.workers.eval = num(&value)? as usize,
                "QA_WORK_DIR" => self.qa.work_dir = Some(value.into()),
                "QA_LLM_ENDPOINT" => self.qa.llm_endpoint = Some(value),
                "QA_LMM_ENDPOINT" => self.qa.lmm_endpoint = Some(value),
                "LOG" => {}
                _ => {
                    return Err(ConfigError::Env {
                        name,
                        message: "unknown setting".into(),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.listen.parse::<std::net::SocketAddr>().is_err() {
            return bad(format!("listen address `{}` is not host:port", self.listen));
        }
        check_endpoint("encoder.endpoint", &self.encoder.endpoint)?;
        for (name, ep) in [
            ("vlm_endpoint", &self.vlm_endpoint),
            ("qa.llm_endpoint", &self.qa.llm_endpoint),
            ("qa.lmm_endpoint", &self.qa.lmm_endpoint),
        ] {
            if let Some(ep) = ep {
                check_endpoint(name, ep)?;
            }
        }
        self.encoder.validate().map_err(ConfigError::Invalid)?;
        self.grounding.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.workers.ingest == 0 || self.workers.eval == 0 || self.workers.job_attempts == 0 {
            return bad("worker limits and job attempts must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mock_vlm.fidelity) {
            return bad("mock_vlm.fidelity must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn index_path(&self) -> PathBuf {
        self.index_path.clone().unwrap_or_else(|| self.data_dir.join("index.fsea"))
    }

    pub fn qa_work_dir(&self) -> PathBuf {
        self.qa.work_dir.clone().unwrap_or_else(|| self.data_dir.join("qa"))
    }

    /// Creates the data directories and checks the index location accepts
    /// writes.
    pub fn prepare_dirs(&self) -> Result<(), ConfigError> {
        let index = self.index_path();
        let parent = index.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        for dir in [self.data_dir.as_path(), parent] {
            std::fs::create_dir_all(dir)
                .map_err(|e| ConfigError::Invalid(format!("cannot create {}: {e}", dir.display())))?;
        }
        let probe = parent.join(".write-probe");
        std::fs::write(&probe, b"")
            .and_then(|_| std::fs::remove_file(&probe))
            .map_err(|e| ConfigError::Invalid(format!("index directory {} is not writable: {e}", parent.display())))
    }
}

fn check_endpoint(name: &str, ep: &str) -> Result<(), ConfigError> {
    if ep.starts_with("mock://") {
        return Ok(());
    }
    match url::Url::parse(ep) {
        Ok(u) if matches!(u.scheme(), "http" | "https") && u.host().is_some() => Ok(()),
        _ => Err(ConfigError::Invalid(format!("{name} `{ep}` is not an http(s) or mock:// URI"))),
    }
}
