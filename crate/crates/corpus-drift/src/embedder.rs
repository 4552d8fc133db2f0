//! Text-to-vector backends: the in-process feature-hash embedder and an HTTP
//! client for an embedding sidecar.
//!
//! Sidecar protocol:
//!
//! - `GET {endpoint}/health` → `{"status":"ok","model":"<name>"}`
//! - `POST {endpoint}/embed` with `{"texts": [...]}` →
//!   `{"model": "<name>", "dimension": <int>, "embeddings": [[...], ...]}`,
//!   rows aligned with the request.
//!
//! Remote vectors are re-normalized locally.

use std::time::Duration;

use corpus_drift_core::embed::{EmbedError, EmbeddingVector, HashEmbedder, DEFAULT_DIMENSION, DEFAULT_HASH_SEED};
use corpus_drift_core::text;
use serde::{Deserialize, Serialize};

const RESPONSE_LIMIT: u64 = 512 * 1024 * 1024;
const EXCERPT_LEN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderConfig {
    pub backend: Backend,
    pub dimension: usize,
    pub endpoint_url: Option<String>,
    pub batch_size: usize,
    pub timeout: Duration,
    pub retries: u32,
    /// Concurrent sidecar requests.
    pub max_in_flight: usize,
    pub hash_seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Hash,
            dimension: DEFAULT_DIMENSION,
            endpoint_url: None,
            batch_size: 64,
            timeout: Duration::from_secs(60),
            retries: 3,
            max_in_flight: 1,
            hash_seed: DEFAULT_HASH_SEED,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedderError> {
        if self.dimension < 2 {
            return Err(EmbedderError::InvalidConfig(format!("dimension must be >= 2, got {}", self.dimension)));
        }
        if self.batch_size < 1 {
            return Err(EmbedderError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.max_in_flight < 1 {
            return Err(EmbedderError::InvalidConfig("max_in_flight must be >= 1".into()));
        }
        if self.backend == Backend::Remote && self.endpoint_url.is_none() {
            return Err(EmbedderError::InvalidConfig("remote backend needs an endpoint_url".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EmbedderError {
    #[error("text {index} is empty")]
    EmptyText { index: usize },
    #[error("no texts to embed")]
    NoTexts,
    #[error("sidecar at {url} unavailable after {attempts} attempt(s): {last_error}")]
    RemoteUnavailable { url: String, attempts: u32, last_error: String },
    #[error("sidecar returned dimension {found}, configured {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sidecar protocol error: {reason}; response: {excerpt}")]
    ProtocolError { reason: String, excerpt: String },
    #[error("invalid embedder configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    model: String,
    dimension: usize,
    embeddings: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Health {
    pub status: String,
    pub model: String,
}

fn excerpt(body: &str) -> String {
    body.chars().take(EXCERPT_LEN).collect()
}

/// Blocking client for the sidecar protocol.
pub struct RemoteClient {
    agent: ureq::Agent,
    base: String,
    retries: u32,
    dimension: usize,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
}

impl RemoteClient {
    pub fn new(config: &EmbedderConfig) -> Result<Self, EmbedderError> {
        let base = config
            .endpoint_url
            .clone()
            .ok_or_else(|| EmbedderError::InvalidConfig("remote backend needs an endpoint_url".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            base: base.trim_end_matches('/').to_string(),
            retries: config.retries,
            dimension: config.dimension,
        })
    }

    fn with_retries<T>(
        &self,
        url: &str,
        mut call: impl FnMut() -> Result<Attempt<T>, EmbedderError>,
    ) -> Result<T, EmbedderError> {
        let attempts = self.retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 << attempt.min(6)));
            }
            match call()? {
                Attempt::Done(value) => return Ok(value),
                Attempt::Retry(reason) => {
                    log::warn!("sidecar request to {url} failed (attempt {}): {reason}", attempt + 1);
                    last_error = reason;
                }
            }
        }
        Err(EmbedderError::RemoteUnavailable { url: url.to_string(), attempts, last_error })
    }

    fn read_body(response: &mut ureq::http::Response<ureq::Body>) -> Result<String, String> {
        response.body_mut().with_config().limit(RESPONSE_LIMIT).read_to_string().map_err(|e| e.to_string())
    }

    pub fn health(&self) -> Result<Health, EmbedderError> {
        let url = format!("{}/health", self.base);
        let body = self.with_retries(&url, || match self.agent.get(&url).call() {
            Err(e) => Ok(Attempt::Retry(e.to_string())),
            Ok(mut resp) if resp.status().is_success() => match Self::read_body(&mut resp) {
                Ok(body) => Ok(Attempt::Done(body)),
                Err(e) => Ok(Attempt::Retry(e)),
            },
            Ok(resp) => Ok(Attempt::Retry(format!("HTTP {}", resp.status()))),
        })?;
        let health: Health = serde_json::from_str(&body)
            .map_err(|e| EmbedderError::ProtocolError { reason: e.to_string(), excerpt: excerpt(&body) })?;
        if health.status != "ok" {
            return Err(EmbedderError::ProtocolError {
                reason: format!("status {:?}", health.status),
                excerpt: excerpt(&body),
            });
        }
        Ok(health)
    }

    /// One request; `texts.len()` vectors come back in order.
    pub fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedderError> {
        let url = format!("{}/embed", self.base);
        let body = self.with_retries(&url, || match self.agent.post(&url).send_json(EmbedRequest { texts }) {
            Err(e) => Ok(Attempt::Retry(e.to_string())),
            Ok(mut resp) => {
                let status = resp.status();
                let body = Self::read_body(&mut resp);
                if status.is_server_error() {
                    return Ok(Attempt::Retry(format!("HTTP {status}")));
                }
                let body = match body {
                    Ok(body) => body,
                    Err(e) => return Ok(Attempt::Retry(e)),
                };
                if !status.is_success() {
                    return Err(EmbedderError::ProtocolError {
                        reason: format!("HTTP {status}"),
                        excerpt: excerpt(&body),
                    });
                }
                Ok(Attempt::Done(body))
            }
        })?;
        let protocol = |reason: String| EmbedderError::ProtocolError { reason, excerpt: excerpt(&body) };
        let response: EmbedResponse = serde_json::from_str(&body).map_err(|e| protocol(e.to_string()))?;
        if response.dimension != self.dimension {
            return Err(EmbedderError::DimensionMismatch { expected: self.dimension, found: response.dimension });
        }
        if response.embeddings.len() != texts.len() {
            return Err(protocol(format!("{} embeddings for {} texts", response.embeddings.len(), texts.len())));
        }
        response
            .embeddings
            .iter()
            .map(|row| {
                if row.len() != self.dimension {
                    return Err(EmbedderError::DimensionMismatch { expected: self.dimension, found: row.len() });
                }
                Ok(EmbeddingVector::normalized_f32(row, response.model.as_str())?)
            })
            .collect()
    }
}

fn check_texts(texts: &[&str]) -> Result<(), EmbedderError> {
    if texts.is_empty() {
        return Err(EmbedderError::NoTexts);
    }
    if let Some(index) = texts.iter().position(|t| text::tokens(t).next().is_none()) {
        return Err(EmbedderError::EmptyText { index });
    }
    Ok(())
}

/// Embeds through the sidecar in `batch_size` chunks, with up to
/// `max_in_flight` requests outstanding. Output order matches input order.
pub fn remote_embed(texts: &[&str], config: &EmbedderConfig) -> Result<Vec<EmbeddingVector>, EmbedderError> {
    config.validate()?;
    check_texts(texts)?;
    let client = RemoteClient::new(config)?;
    let batches: Vec<&[&str]> = texts.chunks(config.batch_size).collect();
    let mut results: Vec<Option<Result<Vec<EmbeddingVector>, EmbedderError>>> =
        (0..batches.len()).map(|_| None).collect();
    for (wave_index, wave) in batches.chunks(config.max_in_flight).enumerate() {
        let first = wave_index * config.max_in_flight;
        std::thread::scope(|scope| {
            let handles: Vec<_> = wave.iter().map(|batch| scope.spawn(|| client.embed(batch))).collect();
            for (offset, handle) in handles.into_iter().enumerate() {
                results[first + offset] = Some(handle.join().expect("embedding worker panicked"));
            }
        });
    }
    let mut out = Vec::with_capacity(texts.len());
    let mut tag: Option<String> = None;
    for result in results {
        for v in result.expect("every batch ran")? {
            match &tag {
                None => tag = Some(v.model_tag().to_string()),
                Some(t) if t != v.model_tag() => {
                    return Err(EmbedderError::ProtocolError {
                        reason: format!("model changed mid-run: {t} -> {}", v.model_tag()),
                        excerpt: String::new(),
                    })
                }
                Some(_) => {}
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// One unit-norm vector per text, in input order.
pub fn embed_batch(texts: &[&str], config: &EmbedderConfig) -> Result<Vec<EmbeddingVector>, EmbedderError> {
    config.validate()?;
    check_texts(texts)?;
    match config.backend {
        Backend::Hash => {
            let embedder = HashEmbedder::with_seed(config.dimension, config.hash_seed)?;
            texts
                .iter()
                .enumerate()
                .map(|(index, t)| match embedder.embed(t) {
                    Err(EmbedError::EmptyText) => Err(EmbedderError::EmptyText { index }),
                    other => Ok(other?),
                })
                .collect()
        }
        Backend::Remote => remote_embed(texts, config),
    }
}

/// Tag that vectors from this configuration will carry, when it is known
/// without contacting a sidecar.
pub fn local_model_tag(config: &EmbedderConfig) -> Option<String> {
    match config.backend {
        Backend::Hash => HashEmbedder::with_seed(config.dimension, config.hash_seed).ok().map(|e| e.model_tag()),
        Backend::Remote => None,
    }
}
