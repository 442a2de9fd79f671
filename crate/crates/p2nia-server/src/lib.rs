//! HTTP facade for the platform side of the fairness-audit protocol.
//!
//! One process is one platform: it holds the audit data and the model
//! under audit, and answers each posted audit request with a release
//! document. Handlers are thin wrappers around the core protocol
//! functions; the privatization seed for session `i` is derived from the
//! platform's base seed and `i`, so a server restarted with the same
//! configuration replays the same sequence of releases.
//!
//! Routes:
//!
//! | Method | Path            | Body / response                         |
//! |--------|-----------------|-----------------------------------------|
//! | GET    | `/api/v1/health`| `{"status":"ok"}`                       |
//! | GET    | `/api/v1/info`  | platform facts as JSON                  |
//! | POST   | `/api/v1/audit` | request JSON in, release document out   |
//!
//! Rejected requests come back as 422 with `{"error": reason}`; malformed
//! request bodies as 400.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use p2nia_core::data::Dataset;
use p2nia_core::model::NaiveBayesModel;
use p2nia_core::protocol::{platform_respond, AuditRequest, EpsilonMode, PlatformInfo};
use p2nia_core::{seed, Error};

/// Everything a running platform holds: configuration, data, model, and
/// the session counter that drives per-session seed derivation.
pub struct PlatformState {
    platform_id: String,
    epsilon_mode: EpsilonMode,
    base_seed: u64,
    audit_data: Dataset,
    model: NaiveBayesModel,
    sessions: AtomicU64,
}

impl PlatformState {
    pub fn new(
        platform_id: &str,
        epsilon_mode: EpsilonMode,
        base_seed: u64,
        audit_data: Dataset,
        model: NaiveBayesModel,
    ) -> PlatformState {
        PlatformState {
            platform_id: platform_id.to_string(),
            epsilon_mode,
            base_seed,
            audit_data,
            model,
            sessions: AtomicU64::new(0),
        }
    }

    pub fn info(&self) -> PlatformInfo {
        let schema = self.audit_data.schema();
        PlatformInfo {
            platform_id: self.platform_id.clone(),
            protected_attribute: schema.attributes[schema.protected_index()].name.clone(),
            n_rows: self.audit_data.n_rows() as u64,
            epsilon_mode: self.epsilon_mode,
            schema: schema.clone(),
        }
    }
}

/// Build the service router. Shared so tests (and embedders) can mount it
/// on any listener.
pub fn router(state: Arc<PlatformState>) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/info", get(info))
        .route("/api/v1/audit", post(audit))
        .with_state(state)
}

/// Serve on an already-bound listener until ctrl-c.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<PlatformState>,
) -> p2nia_core::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn info(State(state): State<Arc<PlatformState>>) -> Json<PlatformInfo> {
    Json(state.info())
}

async fn audit(State(state): State<Arc<PlatformState>>, body: String) -> Response {
    let request = match AuditRequest::from_json(&body) {
        Ok(r) => r,
        Err(e) => return error_response(&e),
    };
    let session = state.sessions.fetch_add(1, Ordering::SeqCst);
    let session_seed = seed::derive(state.base_seed, &[session]);
    // The respond path is CPU-bound (labeling plus privatizing the whole
    // audit set), so keep it off the async workers.
    let result = tokio::task::spawn_blocking(move || {
        platform_respond(
            &request,
            &state.audit_data,
            &state.model,
            state.epsilon_mode,
            &state.platform_id,
            session_seed,
        )
        .and_then(|release| release.to_document())
    })
    .await;
    match result {
        Ok(Ok(document)) => (
            StatusCode::OK,
            [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
            document,
        )
            .into_response(),
        Ok(Err(e)) => error_response(&e),
        Err(join_err) => error_response(&Error::Protocol(format!(
            "audit task failed: {join_err}"
        ))),
    }
}

fn error_response(err: &Error) -> Response {
    let status = match err {
        Error::Rejected(_) => StatusCode::UNPROCESSABLE_ENTITY,
        Error::Json(_) => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    (status, Json(json!({"error": err.to_string()}))).into_response()
}
