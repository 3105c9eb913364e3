//! Grading of one submission: retrieve, prompt, call the model, validate,
//! and compute the total on the engine side.

mod parse;
mod prompt;
mod provider;
mod submissions;

pub use parse::{parse_agent_output, DraftAssessment, ParseError};
pub use prompt::{assemble_prompt, EvidenceMismatch, Prompt, PromptSection, SectionRole, OUTPUT_SCHEMA};
pub use provider::{
    LlmProvider, LlmProviderConfig, LlmProviderKind, LlmRequest, ProviderError, RemoteProvider, Script,
    ScriptedProvider,
};
pub use submissions::{SubmissionError, SubmissionStore};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, EmbeddingError, EmbeddingVector};
use crate::review::{AssessmentStatus, AssessmentStore, AuditAction, AuditEntry, FailureRecord, ReviewAction, ReviewError};
use crate::rubric::{weighted_total, CriterionScore, Rubric, RubricError};
use crate::vindex::{IndexError, QueryFilter, RetrievalResult, VectorIndex};

/// Essays outside this word range get a length flag.
pub const EXPECTED_WORDS: (usize, usize) = (800, 1000);

/// Reviewer id recorded on agent-side audit entries.
pub const AGENT_ACTOR: &str = "agent";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub id: String,
    pub student_ref: String,
    pub essay_text: String,
    pub word_count: usize,
    pub submitted_at: DateTime<Utc>,
    pub cohort: Option<String>,
    pub length_flag: bool,
}

impl Submission {
    pub fn new(
        id: impl Into<String>,
        student_ref: impl Into<String>,
        essay_text: &str,
        cohort: Option<String>,
    ) -> Result<Self, SubmissionError> {
        if essay_text.trim().is_empty() {
            return Err(SubmissionError::EmptyEssay);
        }
        let word_count = essay_text.split_whitespace().count();
        Ok(Self {
            id: id.into(),
            student_ref: student_ref.into(),
            essay_text: essay_text.to_string(),
            word_count,
            submitted_at: Utc::now(),
            cohort,
            length_flag: !(EXPECTED_WORDS.0..=EXPECTED_WORDS.1).contains(&word_count),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub id: String,
    pub submission_id: String,
    pub rubric_id: String,
    pub criterion_scores: Vec<CriterionScore>,
    pub overall_comment: String,
    pub total_percent: f64,
    pub evidence: Vec<RetrievalResult>,
    pub generated_at: DateTime<Utc>,
    pub model_label: String,
    pub status: AssessmentStatus,
    pub review_trail: Vec<AuditEntry>,
    /// Copied from the submission so review queries can filter without a join.
    pub cohort: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum GradeError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Prompt(#[from] EvidenceMismatch),
    #[error(transparent)]
    ProviderUnavailable(#[from] ProviderError),
    #[error("model output unusable after {attempts} attempts: {last_error}")]
    UnparseableAfterRepairs { attempts: u32, last_error: ParseError },
    #[error(transparent)]
    Rubric(#[from] RubricError),
    #[error(transparent)]
    Store(#[from] ReviewError),
}

impl GradeError {
    /// Stable machine code.
    pub fn code(&self) -> &'static str {
        match self {
            GradeError::Embedding(_) => "EmbeddingFailure",
            GradeError::Index(_) => "IndexFailure",
            GradeError::Prompt(_) => "EvidenceMismatch",
            GradeError::ProviderUnavailable(_) => "ProviderUnavailable",
            GradeError::UnparseableAfterRepairs { .. } => "UnparseableAfterRepairs",
            GradeError::Rubric(_) => "RubricViolation",
            GradeError::Store(_) => "StoreFailure",
        }
    }
}

/// Embeds the full essay.
pub fn build_retrieval_query(submission: &Submission, embedder: &dyn Embedder) -> Result<EmbeddingVector, EmbeddingError> {
    embedder.embed(&submission.essay_text)
}

/// Everything one grading call needs.
pub struct Grader<'a> {
    pub rubric: &'a Rubric,
    pub embedder: &'a dyn Embedder,
    pub index: &'a VectorIndex,
    pub provider: &'a dyn LlmProvider,
    pub store: &'a AssessmentStore,
    pub temperature: f64,
    pub max_repair_attempts: u32,
}

impl Grader<'_> {
    pub fn grade(&self, submission: &Submission, k: usize) -> Result<Assessment, GradeError> {
        let result = self.grade_inner(submission, k);
        if let Err(e) = &result {
            let record = FailureRecord {
                submission_id: submission.id.clone(),
                at: Utc::now(),
                code: e.code().to_string(),
                reason: e.to_string(),
            };
            if let Err(log_err) = self.store.record_failure(&record) {
                tracing::error!(error = %log_err, "could not record grading failure");
            }
        }
        result
    }

    fn grade_inner(&self, submission: &Submission, k: usize) -> Result<Assessment, GradeError> {
        let query = build_retrieval_query(submission, self.embedder)?;
        let hits = self.index.query_with_documents(&query, k, &QueryFilter::all())?;
        let (evidence, texts): (Vec<RetrievalResult>, Vec<String>) =
            hits.into_iter().map(|(hit, doc)| (hit, doc.text)).unzip();
        let prompt = assemble_prompt(submission, self.rubric, &evidence, &texts)?;

        let mut request = LlmRequest {
            submission_id: submission.id.clone(),
            student_ref: submission.student_ref.clone(),
            system: prompt.system_text.clone(),
            prompt: prompt.render(),
            temperature: self.temperature,
        };
        let attempts = self.max_repair_attempts + 1;
        let mut draft = None;
        for attempt in 1..=attempts {
            let raw = self.provider.complete(&request)?;
            match parse_agent_output(&raw, self.rubric) {
                Ok(d) => {
                    draft = Some(d);
                    break;
                }
                Err(e) if attempt == attempts => {
                    return Err(GradeError::UnparseableAfterRepairs { attempts, last_error: e });
                }
                Err(e) => {
                    tracing::info!(submission = %submission.id, attempt, error = %e, "requesting repair");
                    request.prompt.push_str("### Correction\n");
                    request.prompt.push_str(&e.correction());
                    request.prompt.push_str("\n\n");
                }
            }
        }
        let draft = draft.expect("loop either parsed or returned");

        let total_percent = weighted_total(self.rubric, &draft.criterion_scores)?;
        let now = Utc::now();
        let mut assessment = Assessment {
            id: uuid::Uuid::new_v4().to_string(),
            submission_id: submission.id.clone(),
            rubric_id: self.rubric.id.clone(),
            criterion_scores: draft.criterion_scores,
            overall_comment: draft.overall_comment,
            total_percent,
            evidence,
            generated_at: now,
            model_label: self.provider.label(),
            status: AssessmentStatus::Draft,
            review_trail: Vec::new(),
            cohort: submission.cohort.clone(),
        };
        assessment.status = assessment.status.apply(ReviewAction::Submit)?;
        assessment.review_trail.push(AuditEntry {
            at: now,
            reviewer_id: AGENT_ACTOR.to_string(),
            action: AuditAction::Submitted,
            note: None,
            diff_summary: None,
        });
        self.store.insert(assessment.clone())?;
        Ok(assessment)
    }
}
