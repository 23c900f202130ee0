//! Blocking client for the JSON-over-HTTP backend protocol.
//!
//! ```text
//! GET  /v1/info        -> {"embedder_id"|"model_id": str, "dim"?: int, "vocab_size"?: int}
//! POST /v1/embed       {"texts": [str]}        -> {"vectors": [[number; dim]]}
//! POST /v1/tokenize    {"text": str}           -> {"token_ids": [int]}
//! POST /v1/detokenize  {"token_ids": [int]}    -> {"text": str}
//! POST /v1/logits      {"token_ids": [int]}    -> {"logits": [number; vocab_size]}
//! errors: HTTP 4xx/5xx with {"error": str}
//! ```
//!
//! Every response is checked against the shape announced by `/v1/info` at
//! connect time. Transport failures, deadline hits, and 5xx replies are
//! [`BackendError::Retryable`]; everything else is fatal.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Embedder, LogitModel};
use crate::error::BackendError;

#[derive(Clone, Debug)]
pub struct RemoteConfig {
    /// Deadline for one request, connect through body.
    pub timeout: Duration,
    /// Requests allowed in flight per endpoint; callers beyond this wait.
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            max_in_flight: 8,
        }
    }
}

/// `/v1/info` payload.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct TokenizeRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct TokenizeResponse {
    token_ids: Vec<u32>,
}

#[derive(Serialize)]
struct TokenIdsRequest<'a> {
    token_ids: &'a [u32],
}

#[derive(Deserialize)]
struct DetokenizeResponse {
    text: String,
}

#[derive(Deserialize)]
struct LogitsResponse {
    logits: Vec<f64>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    limit: usize,
    busy: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            busy: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut busy = self.busy.lock().unwrap();
        while *busy >= self.limit {
            busy = self.freed.wait(busy).unwrap();
        }
        *busy += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.busy.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug)]
struct Endpoint {
    base: String,
    agent: ureq::Agent,
    gate: Gate,
}

impl Endpoint {
    fn new(base: &str, config: &RemoteConfig) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(config.timeout).build(),
            gate: Gate::new(config.max_in_flight),
        }
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, BackendError> {
        let _permit = self.gate.acquire();
        let url = format!("{}{path}", self.base);
        decode_reply(&url, self.agent.get(&url).call())
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, BackendError> {
        let _permit = self.gate.acquire();
        let url = format!("{}{path}", self.base);
        decode_reply(&url, self.agent.post(&url).send_json(body))
    }
}

fn decode_reply<T: DeserializeOwned>(
    url: &str,
    reply: Result<ureq::Response, ureq::Error>,
) -> Result<T, BackendError> {
    match reply {
        Ok(resp) => {
            let body = resp
                .into_string()
                .map_err(|e| BackendError::Retryable(format!("{url}: reading body: {e}")))?;
            serde_json::from_str(&body)
                .map_err(|e| BackendError::Fatal(format!("{url}: malformed response: {e}")))
        }
        Err(ureq::Error::Status(code, resp)) => {
            let body = resp.into_string().unwrap_or_default();
            let message = serde_json::from_str::<ErrorBody>(&body)
                .map(|b| b.error)
                .unwrap_or(body);
            let message = format!("{url}: HTTP {code}: {message}");
            if code >= 500 {
                Err(BackendError::Retryable(message))
            } else {
                Err(BackendError::Fatal(message))
            }
        }
        Err(ureq::Error::Transport(t)) => Err(BackendError::Retryable(format!("{url}: {t}"))),
    }
}

fn finite_f32(values: Vec<f64>, expected: usize, what: &str) -> Result<Vec<f32>, BackendError> {
    if values.len() != expected {
        return Err(BackendError::Fatal(format!(
            "{what} has length {}, handshake declared {expected}",
            values.len()
        )));
    }
    values
        .into_iter()
        .map(|x| {
            let y = x as f32;
            if y.is_finite() {
                Ok(y)
            } else {
                Err(BackendError::Fatal(format!("{what} contains non-finite value {x}")))
            }
        })
        .collect()
}

#[derive(Debug)]
pub struct RemoteEmbedder {
    endpoint: Endpoint,
    id: String,
    dim: usize,
}

impl RemoteEmbedder {
    /// Handshakes with `/v1/info`; the endpoint must report `embedder_id` and `dim`.
    pub fn connect(base_url: &str, config: RemoteConfig) -> Result<Self, BackendError> {
        let endpoint = Endpoint::new(base_url, &config);
        let info: InfoResponse = endpoint.get("/v1/info")?;
        let id = info
            .embedder_id
            .filter(|s| !s.is_empty())
            .ok_or_else(|| BackendError::Fatal(format!("{base_url}: /v1/info has no embedder_id")))?;
        let dim = info
            .dim
            .filter(|&d| d > 0)
            .ok_or_else(|| BackendError::Fatal(format!("{base_url}: /v1/info has no dim")))?;
        Ok(Self { endpoint, id, dim })
    }
}

impl Embedder for RemoteEmbedder {
    fn embedder_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let resp: EmbedResponse = self.endpoint.post("/v1/embed", &EmbedRequest { texts })?;
        if resp.vectors.len() != texts.len() {
            return Err(BackendError::Fatal(format!(
                "sent {} texts, received {} vectors",
                texts.len(),
                resp.vectors.len()
            )));
        }
        resp.vectors
            .into_iter()
            .map(|v| finite_f32(v, self.dim, "embedding"))
            .collect()
    }
}

#[derive(Debug)]
pub struct RemoteLogitModel {
    endpoint: Endpoint,
    id: String,
    vocab_size: usize,
}

impl RemoteLogitModel {
    /// Handshakes with `/v1/info`; the endpoint must report `model_id` and `vocab_size`.
    pub fn connect(base_url: &str, config: RemoteConfig) -> Result<Self, BackendError> {
        let endpoint = Endpoint::new(base_url, &config);
        let info: InfoResponse = endpoint.get("/v1/info")?;
        let id = info
            .model_id
            .filter(|s| !s.is_empty())
            .ok_or_else(|| BackendError::Fatal(format!("{base_url}: /v1/info has no model_id")))?;
        let vocab_size = info
            .vocab_size
            .filter(|&v| v > 0)
            .ok_or_else(|| BackendError::Fatal(format!("{base_url}: /v1/info has no vocab_size")))?;
        Ok(Self {
            endpoint,
            id,
            vocab_size,
        })
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), BackendError> {
        match ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            Some(bad) => Err(BackendError::Fatal(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab_size
            ))),
            None => Ok(()),
        }
    }
}

impl LogitModel for RemoteLogitModel {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn tokenize(&self, text: &str) -> Result<Vec<u32>, BackendError> {
        let resp: TokenizeResponse = self.endpoint.post("/v1/tokenize", &TokenizeRequest { text })?;
        self.check_ids(&resp.token_ids)?;
        Ok(resp.token_ids)
    }

    fn detokenize(&self, ids: &[u32]) -> Result<String, BackendError> {
        self.check_ids(ids)?;
        let resp: DetokenizeResponse = self
            .endpoint
            .post("/v1/detokenize", &TokenIdsRequest { token_ids: ids })?;
        Ok(resp.text)
    }

    fn next_logits(&self, ids: &[u32]) -> Result<Vec<f64>, BackendError> {
        if ids.is_empty() {
            return Err(BackendError::Fatal("logits request needs at least one token".into()));
        }
        self.check_ids(ids)?;
        let resp: LogitsResponse = self
            .endpoint
            .post("/v1/logits", &TokenIdsRequest { token_ids: ids })?;
        if resp.logits.len() != self.vocab_size {
            return Err(BackendError::Fatal(format!(
                "logits have length {}, handshake declared {}",
                resp.logits.len(),
                self.vocab_size
            )));
        }
        if let Some(x) = resp.logits.iter().find(|x| !x.is_finite()) {
            return Err(BackendError::Fatal(format!("logits contain non-finite value {x}")));
        }
        Ok(resp.logits)
    }
}
