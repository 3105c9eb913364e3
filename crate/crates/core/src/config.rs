use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::LlmProviderConfig;
use crate::embedding::EmbeddingProviderConfig;
use crate::vindex::DEFAULT_K;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen_address: String,
    pub corpus_path: PathBuf,
    pub index_path: PathBuf,
    pub assessment_store_path: PathBuf,
    /// Defaults to `submissions.jsonl` beside the assessment store.
    pub submission_store_path: Option<PathBuf>,
    /// Uploaded human scores; defaults to `human_scores.csv` beside the assessment store.
    pub human_scores_path: Option<PathBuf>,
    /// `None` uses the bundled engineering design rubric.
    pub rubric_path: Option<PathBuf>,
    pub embedding: EmbeddingProviderConfig,
    pub llm: LlmProviderConfig,
    pub default_k: usize,
    pub parallelism: usize,
    pub auto_approve: bool,
    /// Environment variable holding the API bearer token. Unset variable disables auth.
    pub auth_token_env_var: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self::with_data_dir("data")
    }
}

impl ServiceConfig {
    /// All stores under `dir`, everything else default.
    pub fn with_data_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            listen_address: "127.0.0.1:8080".to_string(),
            corpus_path: dir.join("corpus.jsonl"),
            index_path: dir.join("index.jsonl"),
            assessment_store_path: dir.join("assessments.jsonl"),
            submission_store_path: None,
            human_scores_path: None,
            rubric_path: None,
            embedding: EmbeddingProviderConfig::default(),
            llm: LlmProviderConfig::default(),
            default_k: DEFAULT_K,
            parallelism: 4,
            auto_approve: false,
            auth_token_env_var: "RUBRAG_API_TOKEN".to_string(),
        }
    }

    fn beside_assessments(&self, name: &str) -> PathBuf {
        self.assessment_store_path.with_file_name(name)
    }

    pub fn submission_store_path(&self) -> PathBuf {
        self.submission_store_path
            .clone()
            .unwrap_or_else(|| self.beside_assessments("submissions.jsonl"))
    }

    pub fn human_scores_path(&self) -> PathBuf {
        self.human_scores_path
            .clone()
            .unwrap_or_else(|| self.beside_assessments("human_scores.csv"))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.default_k == 0 {
            return Err(ConfigError("default_k must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(ConfigError("parallelism must be at least 1".into()));
        }
        let mut paths = vec![
            self.corpus_path.clone(),
            self.index_path.clone(),
            self.assessment_store_path.clone(),
            self.submission_store_path(),
            self.human_scores_path(),
        ];
        paths.extend(self.rubric_path.clone());
        let unique: HashSet<&PathBuf> = paths.iter().collect();
        if unique.len() != paths.len() {
            return Err(ConfigError("store paths must be distinct".into()));
        }
        self.embedding.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.llm.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(())
    }
}
