//! Blocking clients for OpenAI-compatible `/v1/embeddings` and
//! `/v1/chat/completions` endpoints.

use std::thread;
use std::time::Duration;

use divsynth_core::chat::{ChatMessage, ChatModel, Completion, Sampling};
use divsynth_core::embed::{Embedder, EmbeddingVector, EndpointConfig};
use divsynth_core::par::parallel_map;
use divsynth_core::{Error, Result};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Reads the bearer token named by `cfg.api_key_env`.
pub fn api_key(cfg: &EndpointConfig) -> Result<String> {
    match std::env::var(&cfg.api_key_env) {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(Error::Endpoint(format!(
            "API key variable {} is not set",
            cfg.api_key_env
        ))),
    }
}

/// Shared transport: one client, a token, and retry with exponential backoff
/// on connection failures, 429 and 5xx responses.
struct Transport {
    cfg: EndpointConfig,
    client: Client,
    token: String,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
}

impl Transport {
    fn new(cfg: EndpointConfig) -> Result<Self> {
        cfg.validate()?;
        let token = api_key(&cfg)?;
        let client = Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Endpoint(format!("http client: {e}")))?;
        Ok(Transport { cfg, client, token })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn once<B: Serialize, T: DeserializeOwned>(&self, url: &str, body: &B) -> Result<Attempt<T>> {
        let resp = match self.client.post(url).bearer_auth(&self.token).json(body).send() {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Ok(Attempt::Retry(format!("{url}: HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Error::Endpoint(format!("{url}: HTTP {status}: {text}")));
        }
        let text = resp
            .text()
            .map_err(|e| Error::Endpoint(format!("{url}: reading body: {e}")))?;
        serde_json::from_str(&text)
            .map(Attempt::Done)
            .map_err(|e| Error::Endpoint(format!("{url}: unexpected response: {e}")))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let url = self.url(path);
        let mut delay = self.cfg.backoff_ms;
        let mut last = String::new();
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                log::warn!("{last}; retry {attempt}/{} in {delay} ms", self.cfg.retries);
                thread::sleep(Duration::from_millis(delay));
                delay = delay.saturating_mul(2);
            }
            match self.once(&url, body)? {
                Attempt::Done(v) => return Ok(v),
                Attempt::Retry(msg) => last = msg,
            }
        }
        Err(Error::Endpoint(format!(
            "{last} (gave up after {} attempts)",
            self.cfg.retries + 1
        )))
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbeddingData {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingData>,
}

pub struct HttpEmbedder {
    transport: Transport,
}

impl HttpEmbedder {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        Ok(HttpEmbedder { transport: Transport::new(cfg)? })
    }

    fn embed_chunk(&self, chunk: &[(String, String)]) -> Result<Vec<EmbeddingVector>> {
        let cfg = &self.transport.cfg;
        let body = EmbeddingRequest {
            model: &cfg.model,
            input: chunk.iter().map(|(_, t)| t.as_str()).collect(),
        };
        let resp: EmbeddingResponse = self.transport.post("/v1/embeddings", &body)?;
        if resp.data.len() != chunk.len() {
            return Err(Error::Endpoint(format!(
                "embeddings endpoint returned {} vectors for {} inputs",
                resp.data.len(),
                chunk.len()
            )));
        }
        let mut slots: Vec<Option<Vec<f64>>> = vec![None; chunk.len()];
        for (pos, d) in resp.data.into_iter().enumerate() {
            let i = d.index.unwrap_or(pos);
            match slots.get_mut(i) {
                Some(slot @ None) => *slot = Some(d.embedding),
                _ => return Err(Error::Endpoint(format!("bad or repeated embedding index {i}"))),
            }
        }
        Ok(chunk
            .iter()
            .zip(slots)
            .map(|((id, _), v)| EmbeddingVector {
                id: id.clone(),
                values: v.expect("every index filled"),
                model: cfg.model.clone(),
            })
            .collect())
    }
}

impl Embedder for HttpEmbedder {
    fn model(&self) -> &str {
        &self.transport.cfg.model
    }

    /// Splits the input into `max_batch` requests with up to `concurrency` in
    /// flight, and reassembles the vectors in input order.
    fn embed(&self, batch: &[(String, String)]) -> Result<Vec<EmbeddingVector>> {
        let cfg = &self.transport.cfg;
        let chunks: Vec<&[(String, String)]> = batch.chunks(cfg.max_batch).collect();
        let parts = parallel_map(&chunks, cfg.concurrency, |c| self.embed_chunk(c));
        let mut out = Vec::with_capacity(batch.len());
        for part in parts {
            out.extend(part?);
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

pub struct HttpChat {
    transport: Transport,
}

impl HttpChat {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        Ok(HttpChat { transport: Transport::new(cfg)? })
    }

    /// Requests allowed in flight at once by callers that fan out.
    pub fn concurrency(&self) -> usize {
        self.transport.cfg.concurrency
    }
}

impl ChatModel for HttpChat {
    fn model(&self) -> &str {
        &self.transport.cfg.model
    }

    fn complete(&self, messages: &[ChatMessage], sampling: &Sampling) -> Result<Completion> {
        let body = ChatRequest {
            model: &self.transport.cfg.model,
            messages,
            temperature: sampling.temperature,
            max_tokens: sampling.max_tokens,
        };
        let resp: ChatResponse = self.transport.post("/v1/chat/completions", &body)?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Error::Endpoint("chat endpoint returned no choices".into()))?;
        Ok(Completion {
            content: choice.message.content.unwrap_or_default(),
            finish_reason: choice.finish_reason.unwrap_or_else(|| "unknown".into()),
        })
    }
}
