#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use foresearch_core::answer::VlmBackend;
use foresearch_core::encoder::EncoderBackend;
use foresearch_core::synth::{ScenarioConfig, SyntheticWorld};
use foresearch_service::api::{router, ApiState};
use foresearch_service::app::App;
use foresearch_service::clients::{encoder_backend, vlm_backend};
use foresearch_service::config::ServiceConfig;
use foresearch_service::corpus::{write_corpus, Corpus};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub fn small_scenario() -> ScenarioConfig {
    ScenarioConfig {
        videos: 3,
        actors_per_video: 4,
        duration_seconds: 30.0,
        seed: 11,
        ..Default::default()
    }
}

pub fn corpus(dir: &Path) -> Corpus {
    write_corpus(dir, &small_scenario()).expect("corpus written")
}

pub fn world(c: &Corpus) -> SyntheticWorld {
    SyntheticWorld::from_json(&std::fs::read_to_string(&c.world).unwrap()).unwrap()
}

pub fn config(c: &Corpus) -> ServiceConfig {
    let mut cfg = ServiceConfig::from_file(&c.config).unwrap();
    cfg.workers.job_retry_delay_ms = 10;
    cfg
}

pub fn app_with(cfg: ServiceConfig, enc: Option<Arc<dyn EncoderBackend>>, vlm: Option<Arc<dyn VlmBackend>>) -> Arc<App> {
    let enc = enc.unwrap_or_else(|| encoder_backend(&cfg).unwrap());
    let vlm = vlm.unwrap_or_else(|| vlm_backend(&cfg).unwrap());
    Arc::new(App::with_backends(cfg, enc, vlm).unwrap())
}

pub fn api(app: Arc<App>) -> Router {
    router(ApiState::new(app))
}

pub async fn call(r: &Router, method: &str, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut b = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        b = b.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(v) => b.header("content-type", "application/json").body(Body::from(v.to_string())),
        None => b.body(Body::empty()),
    }
    .unwrap();
    let resp = r.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn call_json(r: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(r, method, uri, body, None).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

/// Polls a job until it reaches a terminal state.
pub async fn wait_job(r: &Router, id: &str) -> Value {
    for _ in 0..600 {
        let (s, v) = call_json(r, "GET", &format!("/v1/jobs/{id}"), None).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        if v["status"] == "completed" || v["status"] == "failed" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {id} did not finish");
}

pub fn ingest_body(c: &Corpus, i: usize) -> Value {
    let (m, d) = &c.videos[i];
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(m).unwrap()).unwrap();
    serde_json::json!({"manifest": manifest, "detections_path": d})
}

/// Ingests every corpus video through the API.
pub async fn ingest_all(r: &Router, c: &Corpus) {
    for i in 0..c.videos.len() {
        let (s, v) = call_json(r, "POST", "/v1/ingest/detections", Some(ingest_body(c, i))).await;
        assert_eq!(s, StatusCode::ACCEPTED, "{v}");
        let job = wait_job(r, v["job_id"].as_str().unwrap()).await;
        assert_eq!(job["status"], "completed", "{job}");
    }
}
