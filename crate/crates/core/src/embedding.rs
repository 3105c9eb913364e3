//! Text embeddings behind a provider contract.
//!
//! The reference provider is signed feature hashing over a bag of lowercase
//! alphanumeric tokens. It is a pure function of `(text, dims)`, which makes
//! every retrieval test reproducible without a model.

use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_DIMS: usize = 256;
const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("text is empty or has no tokens")]
    EmptyText,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("remote embedding provider unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("invalid embedding vector: {0}")]
    InvalidVector(String),
    #[error("invalid embedding provider config: {0}")]
    InvalidConfig(String),
}

/// A unit-length, finite vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Wraps values that must already be unit-normalized.
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::InvalidVector("zero dimensions".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidVector(
                "non-finite component".into(),
            ));
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(EmbeddingError::InvalidVector(format!(
                "norm {norm} is not 1"
            )));
        }
        Ok(Self { values })
    }

    /// Normalizes arbitrary finite values to unit length.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidVector(
                "non-finite component".into(),
            ));
        }
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbeddingError::EmptyText);
        }
        for v in &mut values {
            *v /= norm;
        }
        Self::new(values)
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Plain dot product; both sides are unit vectors.
    pub fn dot(&self, other: &Self) -> Result<f64, EmbeddingError> {
        if self.dims() != other.dims() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `dot(a, b) / (|a| |b|)`, clamped to [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    let dot = a.dot(b)?;
    let denom = l2_norm(a.values()) * l2_norm(b.values());
    Ok((dot / denom).clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;
    fn dims(&self) -> usize;
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn token_hash(token: &str) -> u64 {
    let digest = Sha256::digest(token.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(head)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceEmbedder {
    dims: usize,
}

impl ReferenceEmbedder {
    pub fn new(dims: usize) -> Result<Self, EmbeddingError> {
        if dims == 0 {
            return Err(EmbeddingError::InvalidConfig("dims must be positive".into()));
        }
        Ok(Self { dims })
    }
}

impl Default for ReferenceEmbedder {
    fn default() -> Self {
        Self { dims: DEFAULT_DIMS }
    }
}

impl Embedder for ReferenceEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut acc = vec![0.0f64; self.dims];
        let mut any = false;
        for token in tokenize(text) {
            any = true;
            let h = token_hash(&token);
            let bucket = (h % self.dims as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        if !any {
            return Err(EmbeddingError::EmptyText);
        }
        EmbeddingVector::normalized(acc)
    }

    fn dims(&self) -> usize {
        self.dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingProviderKind {
    Reference,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingProviderConfig {
    pub provider_kind: EmbeddingProviderKind,
    pub dims: usize,
    pub endpoint_url: Option<String>,
    pub auth_token_env_var: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// First retry delay; doubles per attempt.
    pub backoff_base_secs: f64,
    pub max_in_flight: usize,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        Self {
            provider_kind: EmbeddingProviderKind::Reference,
            dims: DEFAULT_DIMS,
            endpoint_url: None,
            auth_token_env_var: None,
            timeout_secs: 30.0,
            max_retries: 3,
            backoff_base_secs: 0.5,
            max_in_flight: 8,
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dims == 0 {
            return Err(EmbeddingError::InvalidConfig("dims must be positive".into()));
        }
        match (self.provider_kind, &self.endpoint_url) {
            (EmbeddingProviderKind::Remote, None) => Err(EmbeddingError::InvalidConfig(
                "remote provider requires endpoint_url".into(),
            )),
            (EmbeddingProviderKind::Reference, Some(_)) => Err(EmbeddingError::InvalidConfig(
                "endpoint_url is only valid for the remote provider".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Embedder>, EmbeddingError> {
        self.validate()?;
        Ok(match self.provider_kind {
            EmbeddingProviderKind::Reference => Box::new(ReferenceEmbedder::new(self.dims)?),
            EmbeddingProviderKind::Remote => Box::new(RemoteEmbedder::new(self.clone())?),
        })
    }
}

/// One-shot embedding through a configured provider.
pub fn embed(text: &str, config: &EmbeddingProviderConfig) -> Result<EmbeddingVector, EmbeddingError> {
    config.build()?.embed(text)
}

/// HTTP embedder: POST `{"input": text}`, expects `{"embedding": [..]}`.
pub struct RemoteEmbedder {
    config: EmbeddingProviderConfig,
    agent: ureq::Agent,
    permits: (SyncSender<()>, Mutex<Receiver<()>>),
}

impl RemoteEmbedder {
    pub fn new(config: EmbeddingProviderConfig) -> Result<Self, EmbeddingError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(true)
            .build()
            .new_agent();
        let slots = config.max_in_flight.max(1);
        let (tx, rx) = sync_channel(slots);
        for _ in 0..slots {
            tx.send(()).expect("channel has capacity");
        }
        Ok(Self {
            config,
            agent,
            permits: (tx, Mutex::new(rx)),
        })
    }

    fn attempt(&self, url: &str, text: &str) -> Result<Vec<f64>, String> {
        #[derive(Deserialize)]
        struct Reply {
            embedding: Vec<f64>,
        }
        let mut req = self.agent.post(url);
        if let Some(var) = &self.config.auth_token_env_var {
            if let Ok(token) = std::env::var(var) {
                req = req.header("Authorization", &format!("Bearer {token}"));
            }
        }
        let mut resp = req
            .send_json(serde_json::json!({ "input": text }))
            .map_err(|e| e.to_string())?;
        let reply: Reply = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        Ok(reply.embedding)
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let url = self
            .config
            .endpoint_url
            .as_deref()
            .expect("validated remote config has an endpoint");
        // Acquire an in-flight slot; the receiver lock is held only while waiting.
        self.permits.1.lock().recv().expect("permit sender lives in self");
        let result = (|| {
            let mut delay = self.config.backoff_base_secs;
            let mut last_err = String::new();
            for attempt in 0..=self.config.max_retries {
                if attempt > 0 {
                    std::thread::sleep(Duration::from_secs_f64(delay));
                    delay *= 2.0;
                }
                match self.attempt(url, text) {
                    Ok(values) => return Ok(values),
                    Err(e) => {
                        tracing::debug!(attempt, error = %e, "embedding request failed");
                        last_err = e;
                    }
                }
            }
            Err(EmbeddingError::RemoteUnavailable(last_err))
        })();
        let _ = self.permits.0.send(());
        let values = result?;
        if values.len() != self.config.dims {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.config.dims,
                actual: values.len(),
            });
        }
        EmbeddingVector::normalized(values)
    }

    fn dims(&self) -> usize {
        self.config.dims
    }
}
