//! Wires the stores, providers and review desk into one closed loop:
//! ingest → grade → review → re-ingest.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::agent::{
    Assessment, GradeError, Grader, LlmProvider, ProviderError, Submission, SubmissionError, SubmissionStore,
};
use crate::config::{ConfigError, ServiceConfig};
use crate::corpus::{self, CorpusError, CorpusStore, DocType, Document, ScanReport};
use crate::embedding::{Embedder, EmbeddingError};
use crate::jsonl::{self, JsonlError};
use crate::review::{AssessmentStatus, AssessmentStore, ReviewDesk, ReviewError};
use crate::rubric::{Rubric, RubricError};
use crate::stats::{self, PairedScores, ReliabilityReport, StatsError};
use crate::vindex::{IndexError, VectorIndex};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Rubric(#[from] RubricError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Submission(#[from] SubmissionError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Grade(#[from] GradeError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Store(#[from] JsonlError),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("no human scores uploaded")]
    NoHumanScores,
}

/// Bounds concurrent grading calls.
struct Gate {
    tx: SyncSender<()>,
    rx: Mutex<Receiver<()>>,
}

impl Gate {
    fn new(slots: usize) -> Self {
        let (tx, rx) = sync_channel(slots);
        for _ in 0..slots {
            tx.send(()).expect("capacity reserved");
        }
        Self { tx, rx: Mutex::new(rx) }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        self.rx.lock().recv().expect("gate sender is owned");
        let out = f();
        let _ = self.tx.send(());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub source: String,
    pub code: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub graded: usize,
    pub failed: usize,
    pub assessment_ids: Vec<String>,
    pub failures: Vec<BatchFailure>,
}

/// One uploaded human score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanScore {
    pub id: String,
    pub rater_a: f64,
    pub rater_b: Option<f64>,
}

pub struct Engine {
    pub config: ServiceConfig,
    pub rubric: Arc<Rubric>,
    pub corpus: Arc<CorpusStore>,
    pub index: Arc<VectorIndex>,
    pub assessments: Arc<AssessmentStore>,
    pub submissions: Arc<SubmissionStore>,
    pub embedder: Arc<dyn Embedder>,
    pub provider: Arc<dyn LlmProvider>,
    pub review: ReviewDesk,
    gate: Gate,
    ingest_lock: Mutex<()>,
    human_scores_lock: Mutex<()>,
}

fn ensure_parent(path: &Path) -> Result<(), EngineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| EngineError::Io(format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

impl Engine {
    /// Opens every store, building providers from the config.
    pub fn open(config: ServiceConfig) -> Result<Self, EngineError> {
        let provider: Arc<dyn LlmProvider> = Arc::from(config.llm.build()?);
        Self::open_with_provider(config, provider)
    }

    /// Opens with an externally owned provider (tests keep a handle to it).
    pub fn open_with_provider(config: ServiceConfig, provider: Arc<dyn LlmProvider>) -> Result<Self, EngineError> {
        config.validate()?;
        let rubric = match &config.rubric_path {
            Some(p) => Rubric::load(p)?,
            None => Rubric::engineering_design(),
        };
        for p in [&config.corpus_path, &config.index_path, &config.assessment_store_path] {
            ensure_parent(p)?;
        }
        ensure_parent(&config.submission_store_path())?;
        let embedder: Arc<dyn Embedder> = Arc::from(config.embedding.build()?);
        let corpus = Arc::new(CorpusStore::open(&config.corpus_path)?);
        let index = Arc::new(VectorIndex::open(&config.index_path, embedder.dims())?);
        let assessments = Arc::new(AssessmentStore::open(&config.assessment_store_path)?);
        let submissions = Arc::new(SubmissionStore::open(config.submission_store_path())?);
        let rubric = Arc::new(rubric);
        let review = ReviewDesk::new(
            assessments.clone(),
            corpus.clone(),
            index.clone(),
            submissions.clone(),
            embedder.clone(),
            rubric.clone(),
        );
        let engine = Self {
            gate: Gate::new(config.parallelism),
            config,
            rubric,
            corpus,
            index,
            assessments,
            submissions,
            embedder,
            provider,
            review,
            ingest_lock: Mutex::new(()),
            human_scores_lock: Mutex::new(()),
        };
        let replayed = engine.review.recover()?;
        if replayed > 0 {
            tracing::info!(replayed, "recovered interrupted review decisions");
        }
        engine.reconcile_index()?;
        Ok(engine)
    }

    /// Embeds corpus documents that lack a vector and indexes any the index
    /// is missing (e.g. after a crash between the two writes).
    fn reconcile_index(&self) -> Result<(), EngineError> {
        for mut doc in self.corpus.list(None, None) {
            if doc.embedding.as_ref().is_some_and(|e| e.dims() != self.index.dims()) {
                doc.embedding = None;
            }
            if doc.embedding.is_none() {
                doc.embedding = Some(self.embedder.embed(&doc.text)?);
                self.corpus.update(doc.clone())?;
            }
            if self.index.get(&doc.id).as_ref() != Some(&doc) {
                self.index.upsert(doc)?;
            }
        }
        Ok(())
    }

    fn index_new(&self, mut doc: Document) -> Result<Document, EngineError> {
        doc.embedding = Some(self.embedder.embed(&doc.text)?);
        self.corpus.insert(doc.clone())?;
        self.index.upsert(doc.clone())?;
        Ok(doc)
    }

    /// Ingests, embeds and indexes one document.
    pub fn ingest_text(
        &self,
        raw_text: &str,
        doc_type: DocType,
        source_name: &str,
        cohort: Option<String>,
    ) -> Result<Document, EngineError> {
        let doc = Document::new(raw_text, doc_type, source_name, cohort, None)?;
        let _guard = self.ingest_lock.lock();
        self.index_new(doc)
    }

    /// Ingests every unseen file in `dir`.
    pub fn ingest_dir(&self, dir: &Path, default_doc_type: Option<DocType>) -> Result<ScanReport, EngineError> {
        let _guard = self.ingest_lock.lock();
        let mut report = ScanReport::default();
        for prepared in corpus::prepare_inbox(dir, default_doc_type, |d| self.corpus.contains_digest(d))? {
            match prepared {
                Ok(doc) => {
                    let source = doc.source_name.clone();
                    match self.index_new(doc) {
                        Ok(doc) => report.documents.push(doc),
                        Err(e @ EngineError::Embedding(_)) => report.errors.push((PathBuf::from(source), e.to_string())),
                        Err(e) => return Err(e),
                    }
                }
                Err(e) => report.errors.push(e),
            }
        }
        Ok(report)
    }

    pub fn submit(&self, student_ref: &str, essay_text: &str, cohort: Option<String>) -> Result<Submission, EngineError> {
        Ok(self.submissions.create(student_ref, essay_text, cohort)?)
    }

    fn grader(&self) -> Grader<'_> {
        Grader {
            rubric: &self.rubric,
            embedder: self.embedder.as_ref(),
            index: &self.index,
            provider: self.provider.as_ref(),
            store: &self.assessments,
            temperature: self.config.llm.temperature,
            max_repair_attempts: self.config.llm.max_output_repair_attempts,
        }
    }

    /// Grades one stored submission and takes it off the grading queue.
    pub fn grade_submission(&self, submission_id: &str, k: Option<usize>) -> Result<Assessment, EngineError> {
        let sub = self
            .submissions
            .get(submission_id)
            .ok_or_else(|| SubmissionError::NotFound(submission_id.to_string()))?;
        let k = k.unwrap_or(self.config.default_k);
        let assessment = self.gate.run(|| self.grader().grade(&sub, k))?;
        self.submissions.mark_graded(&sub.id)?;
        if self.config.auto_approve {
            self.review.approve(&assessment.id, "auto-approve")?;
            return Ok(self.assessments.get(&assessment.id).expect("just approved"));
        }
        Ok(assessment)
    }

    fn grade_many(&self, jobs: Vec<(String, Result<Submission, BatchFailure>)>, k: Option<usize>) -> BatchSummary {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<String, BatchFailure>>>> = Mutex::new(vec![None; jobs.len()]);
        let workers = self.config.parallelism.min(jobs.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((source, job)) = jobs.get(i) else { break };
                    let outcome = match job {
                        Err(f) => Err(f.clone()),
                        Ok(sub) => self.grade_submission(&sub.id, k).map(|a| a.id).map_err(|e| BatchFailure {
                            source: source.clone(),
                            code: engine_error_code(&e).to_string(),
                            reason: e.to_string(),
                        }),
                    };
                    results.lock()[i] = Some(outcome);
                });
            }
        });
        let mut summary = BatchSummary::default();
        for r in results.into_inner().into_iter().flatten() {
            match r {
                Ok(id) => {
                    summary.graded += 1;
                    summary.assessment_ids.push(id);
                }
                Err(f) => {
                    summary.failed += 1;
                    summary.failures.push(f);
                }
            }
        }
        summary
    }

    /// Grades every file in `dir` as a new submission (student ref = file stem).
    /// Per-file failures are reported, never fatal.
    pub fn grade_batch(&self, dir: &Path, cohort: Option<String>, k: Option<usize>) -> Result<BatchSummary, EngineError> {
        let entries = fs::read_dir(dir).map_err(|e| EngineError::Io(format!("{}: {e}", dir.display())))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| !p.is_dir())
            .filter(|p| !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')))
            .collect();
        paths.sort();
        let jobs = paths
            .into_iter()
            .map(|path| {
                let source = path.display().to_string();
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let job = fs::read_to_string(&path)
                    .map_err(|e| BatchFailure {
                        source: source.clone(),
                        code: "IoFailure".into(),
                        reason: e.to_string(),
                    })
                    .and_then(|text| {
                        self.submit(&stem, &text, cohort.clone()).map_err(|e| BatchFailure {
                            source: source.clone(),
                            code: engine_error_code(&e).into(),
                            reason: e.to_string(),
                        })
                    });
                (source, job)
            })
            .collect();
        Ok(self.grade_many(jobs, k))
    }

    /// Grades everything on the grading queue.
    pub fn grade_queue(&self, k: Option<usize>) -> BatchSummary {
        let jobs = self
            .submissions
            .queue()
            .into_iter()
            .map(|s| (s.id.clone(), Ok(s)))
            .collect();
        self.grade_many(jobs, k)
    }

    /// Stores uploaded human scores (`id,rater_a,rater_b`; `rater_b` may be blank).
    pub fn store_human_scores(&self, csv_text: &str) -> Result<usize, EngineError> {
        let rows = parse_human_scores(csv_text)?;
        let _guard = self.human_scores_lock.lock();
        let path = self.config.human_scores_path();
        ensure_parent(&path)?;
        jsonl::write_atomic(&path, csv_text.as_bytes())?;
        Ok(rows.len())
    }

    pub fn human_scores(&self) -> Result<Vec<HumanScore>, EngineError> {
        let _guard = self.human_scores_lock.lock();
        match fs::read_to_string(self.config.human_scores_path()) {
            Ok(text) => parse_human_scores(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(EngineError::NoHumanScores),
            Err(e) => Err(EngineError::Io(e.to_string())),
        }
    }

    /// Pairs uploaded human scores with the machine total of each submission's
    /// latest non-rejected assessment, then runs the reliability battery.
    pub fn reliability(&self, cohort: Option<&str>) -> Result<ReliabilityReport, EngineError> {
        let human = self.human_scores()?;
        let mut latest: HashMap<String, Assessment> = HashMap::new();
        for a in self.assessments.list(None, cohort) {
            if matches!(a.status, AssessmentStatus::PendingReview | AssessmentStatus::Approved) {
                latest.insert(a.submission_id.clone(), a);
            }
        }
        let mut ids = Vec::new();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for row in human {
            if let Some(m) = latest.get(&row.id) {
                ids.push(row.id);
                a.push(row.rater_a);
                b.push(m.total_percent);
            }
        }
        let pairs = PairedScores::new(Some(ids), a, b)?;
        let approval = match self.review.approval_rate(cohort) {
            Ok(r) => Some(r),
            Err(ReviewError::NoDecidedAssessments) => None,
            Err(e) => return Err(e.into()),
        };
        Ok(stats::reliability_report(&pairs, &self.total_bands(), approval)?)
    }

    /// Bands used to bin total scores for kappa: the first criterion's bands.
    pub fn total_bands(&self) -> Vec<crate::rubric::Band> {
        self.rubric.criteria[0].bands.clone()
    }
}

fn parse_human_scores(text: &str) -> Result<Vec<HumanScore>, EngineError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| StatsError::Parse(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers != ["id", "rater_a", "rater_b"] {
        return Err(StatsError::Parse(format!("expected header id,rater_a,rater_b, got {}", headers.join(","))).into());
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<HumanScore>() {
        let row = rec.map_err(|e| StatsError::Parse(e.to_string()))?;
        if !(0.0..=100.0).contains(&row.rater_a) {
            return Err(StatsError::PercentOutOfRange(row.rater_a).into());
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Machine code for an engine error, used in batch summaries and the API.
pub fn engine_error_code(e: &EngineError) -> &'static str {
    match e {
        EngineError::Grade(g) => g.code(),
        EngineError::Submission(SubmissionError::EmptyEssay) => "EmptyEssay",
        EngineError::Submission(SubmissionError::NotFound(_)) => "NotFound",
        EngineError::Corpus(CorpusError::EmptyDocument) => "EmptyDocument",
        EngineError::Corpus(CorpusError::UnknownDocType(_)) => "UnknownDocType",
        EngineError::Embedding(EmbeddingError::EmptyText) => "EmptyText",
        EngineError::Provider(_) => "ProviderUnavailable",
        EngineError::Stats(_) => "InvalidScores",
        EngineError::Review(ReviewError::NotFound(_)) => "NotFound",
        EngineError::Review(ReviewError::InvalidState { .. }) => "InvalidState",
        EngineError::Review(ReviewError::EmptyReason) => "EmptyReason",
        EngineError::Review(ReviewError::EmptyComment) => "EmptyComment",
        EngineError::Review(ReviewError::Rubric(_)) => "RubricViolation",
        EngineError::NoHumanScores => "NoHumanScores",
        EngineError::Io(_) => "IoFailure",
        _ => "InternalError",
    }
}
