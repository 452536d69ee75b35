//! Stand-alone mock model servers speaking the encoder and VLM wire
//! contracts, for wiring tests and demos without real models.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use foresearch_core::answer::{VlmBackend, VlmRequest, WireRequest, WireResponse};
use foresearch_core::encoder::{EncodeRequest, EncodeResponse, EncoderBackend, EncoderError};
use serde_json::{json, Value};

type Reply<T> = Result<Json<T>, (StatusCode, Json<Value>)>;

fn err(status: StatusCode, m: impl ToString) -> (StatusCode, Json<Value>) {
    (status, Json(json!({"error": m.to_string()})))
}

async fn encode(State(enc): State<Arc<dyn EncoderBackend>>, body: Bytes) -> Reply<EncodeResponse> {
    let req: EncodeRequest = serde_json::from_slice(&body).map_err(|e| err(StatusCode::BAD_REQUEST, e))?;
    req.validate().map_err(|e| err(StatusCode::BAD_REQUEST, e))?;
    let out = tokio::task::spawn_blocking(move || enc.encode(&req))
        .await
        .map_err(|e| err(StatusCode::INTERNAL_SERVER_ERROR, e))?;
    match out {
        Ok(vector) => Ok(Json(EncodeResponse { vector })),
        Err(e @ EncoderError::Unavailable(_)) => Err(err(StatusCode::SERVICE_UNAVAILABLE, e)),
        Err(e) => Err(err(StatusCode::BAD_REQUEST, e)),
    }
}

/// `POST /encode` backed by any encoder.
pub fn encoder_router(backend: Arc<dyn EncoderBackend>) -> Router {
    Router::new().route("/encode", post(encode)).with_state(backend)
}

async fn generate(State(vlm): State<Arc<dyn VlmBackend>>, body: Bytes) -> Reply<WireResponse> {
    let w: WireRequest = serde_json::from_slice(&body).map_err(|e| err(StatusCode::BAD_REQUEST, e))?;
    let out = tokio::task::spawn_blocking(move || vlm.generate(&VlmRequest::from_wire(w)))
        .await
        .map_err(|e| err(StatusCode::INTERNAL_SERVER_ERROR, e))?;
    out.map(|r| Json(WireResponse { text: r.text }))
        .map_err(|e| err(StatusCode::SERVICE_UNAVAILABLE, e))
}

/// `POST /generate` backed by any VLM.
pub fn vlm_router(backend: Arc<dyn VlmBackend>) -> Router {
    Router::new().route("/generate", post(generate)).with_state(backend)
}
