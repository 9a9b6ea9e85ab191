//! Blocking HTTP clients for model servers.
//!
//! Experts, decomposers and aggregators speak the OpenAI-compatible
//! chat-completions shape; embedding providers take `{texts}` and return
//! `{embeddings}`. Transient failures (connection errors, 408, 429, 5xx) are
//! retried once.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use expertflow_core::backend::{
    BackendError, BackendRequest, Decomposer, ExpertBackend, Reply, TextModel,
};
use expertflow_core::router::{Embedding, EmbeddingProvider, RouterError};

const ATTEMPTS: usize = 2;

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    embeddings: Vec<Vec<f64>>,
}

/// POST-with-one-retry transport shared by all clients.
#[derive(Clone, Debug)]
pub struct HttpTransport {
    agent: ureq::Agent,
    timeout: Duration,
}

enum Attempt {
    Done(Value),
    Transient(BackendError),
    Fatal(BackendError),
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport { agent, timeout }
    }

    pub fn post_json<T: Serialize>(&self, url: &str, body: &T) -> Result<Value, BackendError> {
        let mut last = None;
        for attempt in 0..ATTEMPTS {
            match self.attempt(url, body) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(e) => {
                    log::warn!("POST {url} attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn attempt<T: Serialize>(&self, url: &str, body: &T) -> Attempt {
        let mut response = match self.agent.post(url).send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Fatal(BackendError::Timeout(self.timeout))
            }
            Err(
                e
                @ (ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound),
            ) => {
                return Attempt::Transient(BackendError::HttpFailure {
                    status: None,
                    message: e.to_string(),
                })
            }
            Err(e) => {
                return Attempt::Fatal(BackendError::HttpFailure {
                    status: None,
                    message: e.to_string(),
                })
            }
        };
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let message = response.body_mut().read_to_string().unwrap_or_default();
            let err = BackendError::HttpFailure {
                status: Some(status),
                message,
            };
            return if status == 408 || status == 429 || status >= 500 {
                Attempt::Transient(err)
            } else {
                Attempt::Fatal(err)
            };
        }
        match response.body_mut().read_json::<Value>() {
            Ok(v) => Attempt::Done(v),
            Err(ureq::Error::Timeout(_)) => Attempt::Fatal(BackendError::Timeout(self.timeout)),
            Err(e) => Attempt::Fatal(BackendError::HttpFailure {
                status: Some(status),
                message: format!("invalid response body: {e}"),
            }),
        }
    }
}

/// Pulls the generated text out of a chat-completions (or completions, or
/// bare `{text}`) response.
pub fn extract_text(body: &Value) -> Option<String> {
    let choice = body.get("choices").and_then(|c| c.get(0));
    choice
        .and_then(|c| c.pointer("/message/content"))
        .or_else(|| choice.and_then(|c| c.get("text")))
        .or_else(|| body.get("text"))
        .and_then(Value::as_str)
        .map(str::to_owned)
}

/// A model served behind an OpenAI-compatible chat-completions endpoint.
/// `endpoint` is the full URL, e.g. `http://host:8000/v1/chat/completions`.
#[derive(Clone, Debug)]
pub struct HttpModel {
    transport: HttpTransport,
    endpoint: String,
    model: String,
}

impl HttpModel {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Self {
        HttpModel {
            transport: HttpTransport::new(timeout),
            endpoint: endpoint.into(),
            model: model.into(),
        }
    }

    pub fn chat(&self, prompt: &str) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: 0.0,
        };
        let response = self.transport.post_json(&self.endpoint, &body)?;
        extract_text(&response).ok_or_else(|| BackendError::HttpFailure {
            status: Some(200),
            message: "response carries no text field".into(),
        })
    }
}

impl ExpertBackend for HttpModel {
    fn invoke(&self, request: &BackendRequest) -> Result<Reply, BackendError> {
        self.chat(&request.compose_prompt()).map(Reply::instant)
    }
}

impl TextModel for HttpModel {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        self.chat(prompt)
    }
}

/// Sends the raw query to a fine-tuned decomposer model.
#[derive(Clone, Debug)]
pub struct HttpDecomposer(pub HttpModel);

impl Decomposer for HttpDecomposer {
    fn decompose(&self, query: &str) -> Result<String, BackendError> {
        if query.trim().is_empty() {
            return Err(BackendError::DecomposerFailure("empty query".into()));
        }
        self.0
            .chat(query)
            .map_err(|e| BackendError::DecomposerFailure(e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct HttpEmbedder {
    transport: HttpTransport,
    endpoint: String,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        HttpEmbedder {
            transport: HttpTransport::new(timeout),
            endpoint: endpoint.into(),
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, RouterError> {
        let body = self
            .transport
            .post_json(&self.endpoint, &EmbeddingRequest { texts })
            .map_err(|e| RouterError::Provider(e.to_string()))?;
        let parsed: EmbeddingResponse = serde_json::from_value(body)
            .map_err(|e| RouterError::Provider(format!("bad embedding response: {e}")))?;
        if parsed.embeddings.len() != texts.len() {
            return Err(RouterError::Provider(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.embeddings.len()
            )));
        }
        parsed
            .embeddings
            .into_iter()
            .map(|v| Embedding::new(v).map_err(|e| RouterError::Provider(e.to_string())))
            .collect()
    }
}
