//! HTTP query service.
//!
//! The listener comes up immediately; `/v1/health` answers 503 until expert
//! profiles have been loaded or built, after which queries are accepted.

use std::future::IntoFuture;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::config::DeploymentConfig;
use crate::documents::{GraphDoc, RoutingDoc, TraceSummary};
use crate::error::PipelineError;
use crate::pipeline::{Pipeline, QueryOutcome};

#[derive(Clone, Default)]
pub struct ServiceState {
    pipeline: Arc<RwLock<Option<Arc<Pipeline>>>>,
}

impl ServiceState {
    pub fn pending() -> Self {
        Self::default()
    }

    pub fn ready(pipeline: Pipeline) -> Self {
        let state = Self::default();
        state.set_ready(pipeline);
        state
    }

    pub fn set_ready(&self, pipeline: Pipeline) {
        *self.pipeline.write().unwrap_or_else(|p| p.into_inner()) = Some(Arc::new(pipeline));
    }

    fn get(&self) -> Option<Arc<Pipeline>> {
        self.pipeline
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
    }
}

#[derive(Deserialize)]
struct QueryRequest {
    query: String,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct QueryResponse {
    pub answer: String,
    pub graph: GraphDoc,
    pub routing: Vec<RoutingDoc>,
    pub trace: TraceSummary,
}

impl From<&QueryOutcome> for QueryResponse {
    fn from(outcome: &QueryOutcome) -> Self {
        QueryResponse {
            answer: outcome.answer.clone(),
            graph: GraphDoc::from(&outcome.result.graph),
            routing: outcome
                .routing
                .iter()
                .map(|(n, d)| RoutingDoc::new(*n, d))
                .collect(),
            trace: TraceSummary::from(&outcome.result.trace),
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<u32>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ProfileSummary {
    pub expert_id: String,
    pub pooling: String,
    pub dim: usize,
    pub centroids: usize,
}

fn error(
    status: StatusCode,
    code: &str,
    message: impl Into<String>,
    node_id: Option<u32>,
) -> Response {
    let body = ErrorBody {
        code: code.into(),
        message: message.into(),
        node_id,
    };
    (status, Json(body)).into_response()
}

fn not_ready() -> Response {
    error(
        StatusCode::SERVICE_UNAVAILABLE,
        "not_ready",
        "expert profiles are still being prepared",
        None,
    )
}

fn pipeline_error(e: &PipelineError) -> Response {
    let status = match e.code() {
        "bad_decomposition" => StatusCode::UNPROCESSABLE_ENTITY,
        "decomposer_failure" | "backend_failure" | "routing_failure" | "aggregation_failure" => {
            StatusCode::BAD_GATEWAY
        }
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    error(
        status,
        e.code(),
        e.to_string(),
        e.node_id().map(|n| n.get()),
    )
}

async fn health(State(state): State<ServiceState>) -> Response {
    match state.get() {
        Some(_) => (StatusCode::OK, Json(serde_json::json!({"status": "ok"}))).into_response(),
        None => not_ready(),
    }
}

async fn profiles(State(state): State<ServiceState>) -> Response {
    let Some(pipeline) = state.get() else {
        return not_ready();
    };
    let summaries: Vec<ProfileSummary> = pipeline
        .profiles()
        .iter()
        .map(|p| ProfileSummary {
            expert_id: p.expert_id().to_string(),
            pooling: serde_json::to_value(p.pooling())
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            dim: p.dim(),
            centroids: p.centroids().len(),
        })
        .collect();
    Json(serde_json::json!({ "profiles": summaries })).into_response()
}

async fn query(State(state): State<ServiceState>, body: Bytes) -> Response {
    let Some(pipeline) = state.get() else {
        return not_ready();
    };
    if body.iter().all(u8::is_ascii_whitespace) {
        return error(
            StatusCode::BAD_REQUEST,
            "bad_request",
            "request body is empty",
            None,
        );
    }
    let request: QueryRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => {
            return error(
                StatusCode::BAD_REQUEST,
                "bad_request",
                format!("invalid request: {e}"),
                None,
            )
        }
    };
    if request.query.trim().is_empty() {
        return error(
            StatusCode::BAD_REQUEST,
            "bad_request",
            "query is empty",
            None,
        );
    }
    let outcome = tokio::task::spawn_blocking(move || pipeline.run(&request.query)).await;
    match outcome {
        Ok(Ok(outcome)) => Json(QueryResponse::from(&outcome)).into_response(),
        Ok(Err(e)) => pipeline_error(&e),
        Err(e) => error(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            e.to_string(),
            None,
        ),
    }
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/v1/query", post(query))
        .route("/v1/health", get(health))
        .route("/v1/profiles", get(profiles))
        .with_state(state)
}

/// Binds `addr`, prepares the pipeline in the background and serves until
/// ctrl-c. Fails fast if the pipeline cannot be prepared.
pub async fn serve(
    config: DeploymentConfig,
    base_dir: Option<PathBuf>,
    addr: SocketAddr,
) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let state = ServiceState::pending();
    let app = router(state.clone());
    let server = axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .into_future();
    let prepare = async {
        let pipeline =
            tokio::task::spawn_blocking(move || Pipeline::from_config(config, base_dir.as_deref()))
                .await??;
        state.set_ready(pipeline);
        log::info!("profiles ready; accepting queries");
        anyhow::Ok(())
    };
    tokio::pin!(server);
    tokio::select! {
        result = &mut server => return Ok(result?),
        prepared = prepare => prepared?,
    }
    Ok(server.await?)
}
