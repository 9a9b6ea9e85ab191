mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use expertflow::http::{HttpDecomposer, HttpEmbedder, HttpModel};
use expertflow_core::backend::{
    BackendError, BackendRequest, Decomposer, ExpertBackend, TextModel,
};
use expertflow_core::graph::{graph_from_decomposition, ContextEntry, DependencyEdge, NodeId};
use expertflow_core::router::EmbeddingProvider;

const TIMEOUT: Duration = Duration::from_secs(5);

/// Replies with the last user message, prefixed, in chat-completions shape.
async fn echo(Json(body): Json<Value>) -> Json<Value> {
    let content = body["messages"][0]["content"]
        .as_str()
        .unwrap_or_default()
        .to_string();
    assert_eq!(body["temperature"], json!(0.0));
    assert_eq!(body["messages"][0]["role"], "user");
    Json(
        json!({"choices": [{"message": {"role": "assistant", "content": format!("echo[{}]: {content}", body["model"].as_str().unwrap())}}]}),
    )
}

fn url(addr: std::net::SocketAddr, path: &str) -> String {
    format!("http://{addr}{path}")
}

#[test]
fn chat_model_sends_openai_shape_and_reads_text() {
    let addr = common::spawn_server(Router::new().route("/v1/chat/completions", post(echo)));
    let model = HttpModel::new(url(addr, "/v1/chat/completions"), "expert-7b", TIMEOUT);
    assert_eq!(model.complete("hello").unwrap(), "echo[expert-7b]: hello");

    let request = BackendRequest::new(
        NodeId(3),
        "What is the boiling point?",
        vec![ContextEntry {
            source: NodeId(1),
            response: "Water.".into(),
        }],
    );
    let reply = model.invoke(&request).unwrap();
    assert_eq!(reply.latency, Duration::ZERO);
    assert_eq!(
        reply.text,
        "echo[expert-7b]: Context:\nContext[1]: Water.\n\nQuestion: What is the boiling point?\nAnswer:"
    );
}

#[test]
fn decomposer_output_parses_into_the_expected_graph() {
    // A stub decomposer that returns a fixed four-sub-query chain.
    let raw = "<q>Who directed the film?</q><q>When was that director born?</q><q>Where was the director born?</q><q>What is the capital of that country?</q><dep>\"1 -> 2 -> 3 -> 4\"</dep>";
    let app = Router::new().route(
        "/v1/chat/completions",
        post(move || async move { Json(json!({"choices": [{"message": {"content": raw}}]})) }),
    );
    let addr = common::spawn_server(app);
    let decomposer = HttpDecomposer(HttpModel::new(
        url(addr, "/v1/chat/completions"),
        "decomposer",
        TIMEOUT,
    ));
    let out = decomposer.decompose("some multi-part question").unwrap();
    let g = graph_from_decomposition("some multi-part question", &out).unwrap();
    assert_eq!(g.len(), 4);
    assert_eq!(
        g.edges(),
        &[
            DependencyEdge::new(1, 2),
            DependencyEdge::new(2, 3),
            DependencyEdge::new(3, 4)
        ]
    );
    assert!(matches!(
        decomposer.decompose("   "),
        Err(BackendError::DecomposerFailure(_))
    ));
}

#[derive(Clone, Default)]
struct Counter(Arc<AtomicUsize>);

#[test]
fn transient_status_is_retried_once() {
    let counter = Counter::default();
    let app = Router::new()
        .route(
            "/flaky",
            post(|State(c): State<Counter>| async move {
                if c.0.fetch_add(1, Ordering::SeqCst) == 0 {
                    (
                        StatusCode::SERVICE_UNAVAILABLE,
                        Json(json!({"error": "warming up"})),
                    )
                } else {
                    (StatusCode::OK, Json(json!({"text": "ready"})))
                }
            }),
        )
        .with_state(counter.clone());
    let addr = common::spawn_server(app);
    let model = HttpModel::new(url(addr, "/flaky"), "m", TIMEOUT);
    assert_eq!(model.complete("x").unwrap(), "ready");
    assert_eq!(counter.0.load(Ordering::SeqCst), 2);
}

#[test]
fn persistent_server_errors_and_client_errors_surface_status() {
    let counter = Counter::default();
    let app = Router::new()
        .route(
            "/down",
            post(|State(c): State<Counter>| async move {
                c.0.fetch_add(1, Ordering::SeqCst);
                (StatusCode::INTERNAL_SERVER_ERROR, "boom")
            }),
        )
        .route("/bad", post(|| async { (StatusCode::BAD_REQUEST, "no") }))
        .with_state(counter.clone());
    let addr = common::spawn_server(app);

    let down = HttpModel::new(url(addr, "/down"), "m", TIMEOUT);
    match down.complete("x") {
        Err(BackendError::HttpFailure {
            status: Some(500),
            message,
        }) => assert_eq!(message, "boom"),
        other => panic!("{other:?}"),
    }
    assert_eq!(counter.0.load(Ordering::SeqCst), 2, "one retry");

    let bad = HttpModel::new(url(addr, "/bad"), "m", TIMEOUT);
    assert!(matches!(
        bad.complete("x"),
        Err(BackendError::HttpFailure {
            status: Some(400),
            ..
        })
    ));
}

#[test]
fn missing_text_field_is_an_error() {
    let app = Router::new().route("/empty", post(|| async { Json(json!({"choices": []})) }));
    let addr = common::spawn_server(app);
    let model = HttpModel::new(url(addr, "/empty"), "m", TIMEOUT);
    assert!(matches!(
        model.complete("x"),
        Err(BackendError::HttpFailure {
            status: Some(200),
            ..
        })
    ));
}

#[test]
fn slow_server_times_out() {
    let app = Router::new().route(
        "/slow",
        post(|| async {
            tokio::time::sleep(Duration::from_secs(3)).await;
            Json(json!({"text": "late"}))
        }),
    );
    let addr = common::spawn_server(app);
    let model = HttpModel::new(url(addr, "/slow"), "m", Duration::from_millis(300));
    assert!(matches!(model.complete("x"), Err(BackendError::Timeout(_))));
}

#[test]
fn embedding_client_round_trip() {
    let app = Router::new().route(
        "/embed",
        post(|Json(body): Json<Value>| async move {
            let embeddings: Vec<Vec<f64>> = body["texts"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| vec![t.as_str().unwrap().len() as f64, 1.0])
                .collect();
            Json(json!({ "embeddings": embeddings }))
        }),
    );
    let addr = common::spawn_server(app);
    let embedder = HttpEmbedder::new(url(addr, "/embed"), TIMEOUT);
    let out = embedder.embed(&["abc", "de"]).unwrap();
    assert_eq!(out[0].values(), &[3.0, 1.0]);
    assert_eq!(out[1].values(), &[2.0, 1.0]);

    let short = Router::new().route(
        "/embed",
        post(|| async { Json(json!({"embeddings": [[1.0]]})) }),
    );
    let addr = common::spawn_server(short);
    assert!(HttpEmbedder::new(url(addr, "/embed"), TIMEOUT)
        .embed(&["a", "b"])
        .is_err());
}
