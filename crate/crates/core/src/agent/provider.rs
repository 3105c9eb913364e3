//! Language-model provider contract, a scripted double and an HTTP client.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
}

/// One completion request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmRequest {
    pub submission_id: String,
    pub student_ref: String,
    pub system: String,
    pub prompt: String,
    pub temperature: f64,
}

pub trait LlmProvider: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<String, ProviderError>;

    /// Identity recorded on every assessment.
    fn label(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmProviderKind {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmProviderConfig {
    pub provider_kind: LlmProviderKind,
    pub endpoint_url: Option<String>,
    pub auth_token_env_var: Option<String>,
    pub temperature: f64,
    pub max_output_repair_attempts: u32,
    pub timeout_secs: f64,
    /// Script file for the scripted provider.
    pub script_path: Option<PathBuf>,
}

impl Default for LlmProviderConfig {
    fn default() -> Self {
        Self {
            provider_kind: LlmProviderKind::Scripted,
            endpoint_url: None,
            auth_token_env_var: None,
            temperature: 0.0,
            max_output_repair_attempts: 2,
            timeout_secs: 120.0,
            script_path: None,
        }
    }
}

impl LlmProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidConfig("temperature must be >= 0".into()));
        }
        match (self.provider_kind, &self.endpoint_url) {
            (LlmProviderKind::Remote, None) => Err(ProviderError::InvalidConfig(
                "remote provider requires endpoint_url".into(),
            )),
            (LlmProviderKind::Scripted, Some(_)) => Err(ProviderError::InvalidConfig(
                "endpoint_url is only valid for the remote provider".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn LlmProvider>, ProviderError> {
        self.validate()?;
        Ok(match self.provider_kind {
            LlmProviderKind::Scripted => Box::new(match &self.script_path {
                Some(p) => ScriptedProvider::from_file(p)?,
                None => ScriptedProvider::default(),
            }),
            LlmProviderKind::Remote => Box::new(RemoteProvider::new(self)?),
        })
    }
}

/// Script file: canned responses per key, consumed one per call.
///
/// ```json
/// {"responses": {"<submission id or student_ref>": ["first", "second"]},
///  "default": "used for keys without an entry"}
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub responses: HashMap<String, Vec<String>>,
    #[serde(default)]
    pub default: Option<String>,
}

#[derive(Default)]
struct ScriptState {
    queues: HashMap<String, VecDeque<String>>,
    calls: Vec<LlmRequest>,
}

/// Deterministic test double. Looks up the submission id, then the
/// student ref, then falls back to the default response.
#[derive(Default)]
pub struct ScriptedProvider {
    default: Option<String>,
    state: Mutex<ScriptState>,
}

impl ScriptedProvider {
    pub fn new(script: Script) -> Self {
        Self {
            default: script.default,
            state: Mutex::new(ScriptState {
                queues: script
                    .responses
                    .into_iter()
                    .map(|(k, v)| (k, v.into()))
                    .collect(),
                calls: Vec::new(),
            }),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let script: Script = serde_json::from_str(&text)
            .map_err(|e| ProviderError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Ok(Self::new(script))
    }

    /// Queues more responses for `key`.
    pub fn push(&self, key: &str, responses: impl IntoIterator<Item = String>) {
        self.state
            .lock()
            .queues
            .entry(key.to_string())
            .or_default()
            .extend(responses);
    }

    pub fn calls(&self) -> Vec<LlmRequest> {
        self.state.lock().calls.clone()
    }

    pub fn call_count(&self, submission_id: &str) -> usize {
        self.state
            .lock()
            .calls
            .iter()
            .filter(|c| c.submission_id == submission_id)
            .count()
    }
}

impl LlmProvider for ScriptedProvider {
    fn complete(&self, request: &LlmRequest) -> Result<String, ProviderError> {
        let mut state = self.state.lock();
        state.calls.push(request.clone());
        for key in [&request.submission_id, &request.student_ref] {
            if let Some(queue) = state.queues.get_mut(key.as_str()) {
                return queue.pop_front().ok_or_else(|| {
                    ProviderError::Unavailable(format!("script exhausted for {key}"))
                });
            }
        }
        self.default
            .clone()
            .ok_or_else(|| ProviderError::Unavailable(format!("no script for {}", request.submission_id)))
    }

    fn label(&self) -> String {
        "scripted".to_string()
    }
}

/// POSTs `{"system", "prompt", "temperature"}`, reads `{"text"}`.
pub struct RemoteProvider {
    url: String,
    token_var: Option<String>,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(config: &LlmProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        let url = config
            .endpoint_url
            .clone()
            .ok_or_else(|| ProviderError::InvalidConfig("missing endpoint_url".into()))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(true)
            .build()
            .new_agent();
        Ok(Self {
            url,
            token_var: config.auth_token_env_var.clone(),
            agent,
        })
    }
}

impl LlmProvider for RemoteProvider {
    fn complete(&self, request: &LlmRequest) -> Result<String, ProviderError> {
        #[derive(Deserialize)]
        struct Reply {
            text: String,
        }
        let mut req = self.agent.post(&self.url);
        if let Some(token) = self.token_var.as_ref().and_then(|v| std::env::var(v).ok()) {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let body = serde_json::json!({
            "system": request.system,
            "prompt": request.prompt,
            "temperature": request.temperature,
        });
        let mut resp = req
            .send_json(body)
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        let reply: Reply = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        Ok(reply.text)
    }

    fn label(&self) -> String {
        format!("remote:{}", self.url)
    }
}
