//! Human review of generated assessments.
//!
//! Legal status transitions:
//!
//! ```text
//! draft ──submit──▶ pending_review ──approve / edit──▶ approved
//!                                  └──reject─────────▶ rejected
//! ```
//!
//! Approval re-ingests the (possibly edited) feedback into the corpus and the
//! vector index. Each decision is first written as an intent record to a
//! write-ahead file next to the assessment store; [`ReviewDesk::recover`]
//! replays any intent left behind by a crash.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::agent::{Assessment, SubmissionError, SubmissionStore};
use crate::corpus::{CorpusError, CorpusStore, DocType, Document, Provenance};
use crate::embedding::{Embedder, EmbeddingError};
use crate::jsonl::{self, JsonlError};
use crate::rubric::{weighted_total, CriterionScore, Rubric, RubricError};
use crate::vindex::{IndexError, VectorIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssessmentStatus {
    Draft,
    PendingReview,
    Approved,
    Rejected,
}

impl AssessmentStatus {
    pub const ALL: [AssessmentStatus; 4] = [
        AssessmentStatus::Draft,
        AssessmentStatus::PendingReview,
        AssessmentStatus::Approved,
        AssessmentStatus::Rejected,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AssessmentStatus::Draft => "draft",
            AssessmentStatus::PendingReview => "pending_review",
            AssessmentStatus::Approved => "approved",
            AssessmentStatus::Rejected => "rejected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.as_str() == s)
    }

    /// The single source of truth for legal transitions.
    pub fn apply(self, action: ReviewAction) -> Result<Self, ReviewError> {
        use AssessmentStatus::*;
        match (self, action) {
            (Draft, ReviewAction::Submit) => Ok(PendingReview),
            (PendingReview, ReviewAction::Approve | ReviewAction::EditAndApprove) => Ok(Approved),
            (PendingReview, ReviewAction::Reject) => Ok(Rejected),
            (from, action) => Err(ReviewError::InvalidState { from, action }),
        }
    }
}

impl fmt::Display for AssessmentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReviewAction {
    Submit,
    Approve,
    EditAndApprove,
    Reject,
}

impl ReviewAction {
    pub const ALL: [ReviewAction; 4] = [
        ReviewAction::Submit,
        ReviewAction::Approve,
        ReviewAction::EditAndApprove,
        ReviewAction::Reject,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    Submitted,
    Approved,
    EditedAndApproved,
    Rejected,
    RegenerationRequested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub at: DateTime<Utc>,
    pub reviewer_id: String,
    pub action: AuditAction,
    pub note: Option<String>,
    pub diff_summary: Option<String>,
}

/// A grading attempt that produced no assessment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub submission_id: String,
    pub at: DateTime<Utc>,
    pub code: String,
    pub reason: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("assessment {0} not found")]
    NotFound(String),
    #[error("cannot {action:?} an assessment in state {from}")]
    InvalidState {
        from: AssessmentStatus,
        action: ReviewAction,
    },
    #[error("rejection reason is empty")]
    EmptyReason,
    #[error("overall comment is empty")]
    EmptyComment,
    #[error("no approved or rejected assessments in scope")]
    NoDecidedAssessments,
    #[error("assessment {0} already exists")]
    DuplicateId(String),
    #[error(transparent)]
    Rubric(#[from] RubricError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Submission(#[from] SubmissionError),
    #[error(transparent)]
    Store(#[from] JsonlError),
    #[error("injected crash at {0:?}")]
    InjectedCrash(CrashPoint),
}

/// `(approved + edited) / (approved + edited + rejected)`.
pub fn approval_rate_from_counts(approved: usize, rejected: usize) -> Result<f64, ReviewError> {
    let decided = approved + rejected;
    if decided == 0 {
        return Err(ReviewError::NoDecidedAssessments);
    }
    Ok(approved as f64 / decided as f64)
}

#[derive(Default)]
struct StoreState {
    items: Vec<Assessment>,
    by_id: HashMap<String, usize>,
}

impl StoreState {
    fn put(&mut self, a: Assessment) {
        match self.by_id.get(&a.id) {
            Some(&i) => self.items[i] = a,
            None => {
                self.by_id.insert(a.id.clone(), self.items.len());
                self.items.push(a);
            }
        }
    }
}

/// Append-structured assessment file (audit trail embedded per record).
pub struct AssessmentStore {
    path: PathBuf,
    failures_path: PathBuf,
    state: RwLock<StoreState>,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

impl AssessmentStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, ReviewError> {
        let path = path.into();
        let mut state = StoreState::default();
        for a in jsonl::read_all::<Assessment>(&path)? {
            state.put(a);
        }
        Ok(Self {
            failures_path: sibling(&path, ".failures"),
            path,
            state: RwLock::new(state),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn insert(&self, a: Assessment) -> Result<(), ReviewError> {
        let mut state = self.state.write();
        if state.by_id.contains_key(&a.id) {
            return Err(ReviewError::DuplicateId(a.id));
        }
        jsonl::append(&self.path, &a)?;
        state.put(a);
        Ok(())
    }

    /// Writes a new version of an assessment; skipped if identical.
    pub fn put(&self, a: Assessment) -> Result<(), ReviewError> {
        let mut state = self.state.write();
        if state.by_id.get(&a.id).map(|&i| &state.items[i]) == Some(&a) {
            return Ok(());
        }
        jsonl::append(&self.path, &a)?;
        state.put(a);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<Assessment> {
        let state = self.state.read();
        state.by_id.get(id).map(|&i| state.items[i].clone())
    }

    /// Sorted by `generated_at`, then id.
    pub fn list(&self, status: Option<AssessmentStatus>, cohort: Option<&str>) -> Vec<Assessment> {
        let mut out: Vec<Assessment> = self
            .state
            .read()
            .items
            .iter()
            .filter(|a| status.is_none_or(|s| a.status == s))
            .filter(|a| cohort.is_none_or(|c| a.cohort.as_deref() == Some(c)))
            .cloned()
            .collect();
        out.sort_by(|a, b| a.generated_at.cmp(&b.generated_at).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn record_failure(&self, record: &FailureRecord) -> Result<(), ReviewError> {
        jsonl::append(&self.failures_path, record)?;
        Ok(())
    }

    pub fn failures(&self) -> Result<Vec<FailureRecord>, ReviewError> {
        Ok(jsonl::read_all(&self.failures_path)?)
    }
}

/// Where a test can make a decision stop as if the process died.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    AfterIntent,
    AfterStatusWrite,
    AfterCorpusWrite,
}

/// A decision, fully computed before anything durable changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Intent {
    assessment: Assessment,
    document: Option<Document>,
    requeue_submission: Option<String>,
}

/// Body of an approved-feedback document: one `## <criterion>` section per
/// criterion, `## Overall`, then the graded essay under `## Essay`.
pub fn feedback_document_text(rubric: &Rubric, a: &Assessment, essay: Option<&str>) -> String {
    let mut out = String::new();
    for s in &a.criterion_scores {
        let name = rubric
            .criterion(&s.criterion_id)
            .map_or(s.criterion_id.as_str(), |c| c.name.as_str());
        out.push_str(&format!("## {name}\n{}\n\n", s.comment.trim()));
    }
    out.push_str(&format!("## Overall\n{}\n", a.overall_comment.trim()));
    if let Some(essay) = essay {
        out.push_str(&format!("\n## Essay\n{}\n", essay.trim()));
    }
    out
}

fn diff_summary(before: &Assessment, after_scores: &[CriterionScore], after_overall: &str) -> String {
    let mut changes = Vec::new();
    for new in after_scores {
        let Some(old) = before.criterion_scores.iter().find(|s| s.criterion_id == new.criterion_id) else {
            continue;
        };
        let mut parts = Vec::new();
        if old.band != new.band {
            parts.push(format!("band {} -> {}", old.band, new.band));
        }
        if old.percent != new.percent {
            parts.push(format!("percent {} -> {}", old.percent, new.percent));
        }
        if old.comment != new.comment {
            parts.push("comment edited".to_string());
        }
        if !parts.is_empty() {
            changes.push(format!("{}: {}", new.criterion_id, parts.join(", ")));
        }
    }
    if before.overall_comment != after_overall {
        changes.push("overall comment edited".to_string());
    }
    if changes.is_empty() {
        "no changes".to_string()
    } else {
        changes.join("; ")
    }
}

/// Review operations over the shared stores.
pub struct ReviewDesk {
    pub store: Arc<AssessmentStore>,
    pub corpus: Arc<CorpusStore>,
    pub index: Arc<VectorIndex>,
    pub submissions: Arc<SubmissionStore>,
    pub embedder: Arc<dyn Embedder>,
    pub rubric: Arc<Rubric>,
    wal_path: PathBuf,
    decisions: Mutex<()>,
    crash_at: Mutex<Option<CrashPoint>>,
}

impl ReviewDesk {
    pub fn new(
        store: Arc<AssessmentStore>,
        corpus: Arc<CorpusStore>,
        index: Arc<VectorIndex>,
        submissions: Arc<SubmissionStore>,
        embedder: Arc<dyn Embedder>,
        rubric: Arc<Rubric>,
    ) -> Self {
        let wal_path = sibling(store.path(), ".wal");
        Self {
            store,
            corpus,
            index,
            submissions,
            embedder,
            rubric,
            wal_path,
            decisions: Mutex::new(()),
            crash_at: Mutex::new(None),
        }
    }

    #[doc(hidden)]
    pub fn inject_crash(&self, at: Option<CrashPoint>) {
        *self.crash_at.lock() = at;
    }

    fn maybe_crash(&self, here: CrashPoint) -> Result<(), ReviewError> {
        if *self.crash_at.lock() == Some(here) {
            return Err(ReviewError::InjectedCrash(here));
        }
        Ok(())
    }

    /// Replays intents left in the write-ahead file. Returns how many.
    pub fn recover(&self) -> Result<usize, ReviewError> {
        let _guard = self.decisions.lock();
        let intents: Vec<Intent> = jsonl::read_all(&self.wal_path)?;
        for intent in &intents {
            tracing::warn!(assessment = %intent.assessment.id, "replaying interrupted review decision");
            self.apply_intent(intent)?;
        }
        if !intents.is_empty() {
            jsonl::write_atomic(&self.wal_path, b"")?;
        }
        Ok(intents.len())
    }

    fn apply_intent(&self, intent: &Intent) -> Result<(), ReviewError> {
        self.store.put(intent.assessment.clone())?;
        self.maybe_crash(CrashPoint::AfterStatusWrite)?;
        if let Some(doc) = &intent.document {
            self.corpus.upsert(doc.clone())?;
            self.maybe_crash(CrashPoint::AfterCorpusWrite)?;
            if self.index.get(&doc.id).as_ref() != Some(doc) {
                self.index.upsert(doc.clone())?;
            }
        }
        if let Some(sub) = &intent.requeue_submission {
            self.submissions.enqueue(sub)?;
        }
        Ok(())
    }

    fn commit(&self, intent: Intent) -> Result<(), ReviewError> {
        jsonl::append(&self.wal_path, &intent)?;
        self.maybe_crash(CrashPoint::AfterIntent)?;
        self.apply_intent(&intent)?;
        jsonl::write_atomic(&self.wal_path, b"")?;
        Ok(())
    }

    fn pending(&self, id: &str, action: ReviewAction) -> Result<Assessment, ReviewError> {
        let a = self.store.get(id).ok_or_else(|| ReviewError::NotFound(id.to_string()))?;
        a.status.apply(action)?;
        Ok(a)
    }

    fn feedback_document(&self, a: &Assessment, reviewer_id: &str, at: DateTime<Utc>) -> Result<Document, ReviewError> {
        let essay = self.submissions.get(&a.submission_id).map(|s| s.essay_text);
        let text = feedback_document_text(&self.rubric, a, essay.as_deref());
        let mut doc = Document::new(
            &text,
            DocType::ApprovedFeedback,
            &format!("assessment:{}", a.id),
            a.cohort.clone(),
            Some(Provenance {
                submission_id: a.submission_id.clone(),
                reviewer_id: reviewer_id.to_string(),
                approved_at: at,
            }),
        )?;
        doc.embedding = Some(self.embedder.embed(&doc.text)?);
        Ok(doc)
    }

    fn approve_with(
        &self,
        mut a: Assessment,
        reviewer_id: &str,
        action: ReviewAction,
        diff: Option<String>,
    ) -> Result<Document, ReviewError> {
        let now = Utc::now();
        a.status = a.status.apply(action)?;
        a.review_trail.push(AuditEntry {
            at: now,
            reviewer_id: reviewer_id.to_string(),
            action: if action == ReviewAction::EditAndApprove {
                AuditAction::EditedAndApproved
            } else {
                AuditAction::Approved
            },
            note: None,
            diff_summary: diff,
        });
        let doc = self.feedback_document(&a, reviewer_id, now)?;
        self.commit(Intent {
            assessment: a,
            document: Some(doc.clone()),
            requeue_submission: None,
        })?;
        Ok(doc)
    }

    pub fn approve(&self, assessment_id: &str, reviewer_id: &str) -> Result<Document, ReviewError> {
        let _guard = self.decisions.lock();
        let a = self.pending(assessment_id, ReviewAction::Approve)?;
        self.approve_with(a, reviewer_id, ReviewAction::Approve, None)
    }

    pub fn edit_and_approve(
        &self,
        assessment_id: &str,
        reviewer_id: &str,
        edited_scores: Vec<CriterionScore>,
        edited_overall_comment: &str,
    ) -> Result<Document, ReviewError> {
        let _guard = self.decisions.lock();
        let mut a = self.pending(assessment_id, ReviewAction::EditAndApprove)?;
        let total = weighted_total(&self.rubric, &edited_scores)?;
        if edited_overall_comment.trim().is_empty() {
            return Err(ReviewError::EmptyComment);
        }
        let mut ordered = Vec::with_capacity(edited_scores.len());
        for c in &self.rubric.criteria {
            ordered.extend(edited_scores.iter().find(|s| s.criterion_id == c.id).cloned());
        }
        let diff = diff_summary(&a, &ordered, edited_overall_comment);
        a.criterion_scores = ordered;
        a.overall_comment = edited_overall_comment.to_string();
        a.total_percent = total;
        self.approve_with(a, reviewer_id, ReviewAction::EditAndApprove, Some(diff))
    }

    pub fn reject(
        &self,
        assessment_id: &str,
        reviewer_id: &str,
        reason: &str,
        request_regeneration: bool,
    ) -> Result<(), ReviewError> {
        let _guard = self.decisions.lock();
        let mut a = self.pending(assessment_id, ReviewAction::Reject)?;
        if reason.trim().is_empty() {
            return Err(ReviewError::EmptyReason);
        }
        let now = Utc::now();
        a.status = a.status.apply(ReviewAction::Reject)?;
        a.review_trail.push(AuditEntry {
            at: now,
            reviewer_id: reviewer_id.to_string(),
            action: AuditAction::Rejected,
            note: Some(reason.to_string()),
            diff_summary: None,
        });
        if request_regeneration {
            a.review_trail.push(AuditEntry {
                at: now,
                reviewer_id: reviewer_id.to_string(),
                action: AuditAction::RegenerationRequested,
                note: None,
                diff_summary: None,
            });
        }
        let requeue = request_regeneration.then(|| a.submission_id.clone());
        self.commit(Intent {
            assessment: a,
            document: None,
            requeue_submission: requeue,
        })
    }

    /// Pending assessments, oldest first.
    pub fn list_pending(&self, cohort: Option<&str>) -> Vec<Assessment> {
        self.store.list(Some(AssessmentStatus::PendingReview), cohort)
    }

    pub fn approval_rate(&self, cohort: Option<&str>) -> Result<f64, ReviewError> {
        let all = self.store.list(None, cohort);
        let approved = all.iter().filter(|a| a.status == AssessmentStatus::Approved).count();
        let rejected = all.iter().filter(|a| a.status == AssessmentStatus::Rejected).count();
        approval_rate_from_counts(approved, rejected)
    }
}
