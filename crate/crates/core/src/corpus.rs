//! Knowledge documents and the corpus store.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SubsecRound, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::jsonl::{self, JsonlError};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("document text is empty")]
    EmptyDocument,
    #[error("unknown document type `{0}`")]
    UnknownDocType(String),
    #[error("document type is required for {0} (no front matter doc_type)")]
    MissingDocType(String),
    #[error("provenance must be present exactly for approved_feedback documents")]
    ProvenanceMismatch,
    #[error("duplicate document id {0}")]
    DuplicateId(String),
    #[error("document {0} not found")]
    NotFound(String),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error(transparent)]
    Store(#[from] JsonlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocType {
    Rubric,
    ExemplarEssay,
    InstructorFeedback,
    ApprovedFeedback,
}

impl DocType {
    pub const ALL: [DocType; 4] = [
        DocType::Rubric,
        DocType::ExemplarEssay,
        DocType::InstructorFeedback,
        DocType::ApprovedFeedback,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DocType::Rubric => "rubric",
            DocType::ExemplarEssay => "exemplar_essay",
            DocType::InstructorFeedback => "instructor_feedback",
            DocType::ApprovedFeedback => "approved_feedback",
        }
    }
}

impl fmt::Display for DocType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocType {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DocType::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| CorpusError::UnknownDocType(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub submission_id: String,
    pub reviewer_id: String,
    pub approved_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub doc_type: DocType,
    pub text: String,
    pub source_name: String,
    pub ingested_at: DateTime<Utc>,
    pub cohort: Option<String>,
    pub provenance: Option<Provenance>,
    pub embedding: Option<EmbeddingVector>,
}

impl Document {
    /// Builds a validated document with a fresh id. Text is trimmed, nothing else.
    pub fn new(
        raw_text: &str,
        doc_type: DocType,
        source_name: &str,
        cohort: Option<String>,
        provenance: Option<Provenance>,
    ) -> Result<Self, CorpusError> {
        let text = raw_text.trim();
        if text.is_empty() {
            return Err(CorpusError::EmptyDocument);
        }
        if provenance.is_some() != (doc_type == DocType::ApprovedFeedback) {
            return Err(CorpusError::ProvenanceMismatch);
        }
        Ok(Self {
            id: uuid::Uuid::new_v4().to_string(),
            doc_type,
            text: text.to_string(),
            source_name: source_name.to_string(),
            ingested_at: Utc::now().trunc_subsecs(0),
            cohort,
            provenance,
            embedding: None,
        })
    }

    /// Whitespace-token count of the text.
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }

    pub fn digest(&self) -> String {
        text_digest(&self.text)
    }
}

/// SHA-256 of the trimmed text, hex encoded.
pub fn text_digest(text: &str) -> String {
    jsonl::sha256_hex(text.trim().as_bytes())
}

/// Splits an optional `---` front-matter block off the top of a file.
pub fn split_front_matter(content: &str) -> (HashMap<String, String>, &str) {
    let mut meta = HashMap::new();
    let trimmed = content.trim_start_matches('\u{feff}');
    let mut lines = trimmed.split_inclusive('\n');
    match lines.next() {
        Some(first) if first.trim_end() == "---" => {}
        _ => return (meta, trimmed),
    }
    let mut consumed = trimmed.split_inclusive('\n').next().map_or(0, str::len);
    for line in lines {
        consumed += line.len();
        let l = line.trim_end();
        if l == "---" {
            return (meta, &trimmed[consumed..]);
        }
        if let Some((k, v)) = l.split_once(':') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    // Unterminated block: treat the whole file as body.
    (HashMap::new(), trimmed)
}

#[derive(Debug, Default)]
pub struct ScanReport {
    pub documents: Vec<Document>,
    pub errors: Vec<(PathBuf, String)>,
}

#[derive(Default)]
struct CorpusState {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
    digests: HashSet<String>,
}

impl CorpusState {
    fn put(&mut self, doc: Document) {
        self.digests.insert(doc.digest());
        match self.by_id.get(&doc.id) {
            Some(&i) => self.docs[i] = doc,
            None => {
                self.by_id.insert(doc.id.clone(), self.docs.len());
                self.docs.push(doc);
            }
        }
    }
}

/// Append-structured document store; later records for an id supersede earlier ones.
pub struct CorpusStore {
    path: PathBuf,
    state: RwLock<CorpusState>,
}

impl CorpusStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, CorpusError> {
        let path = path.into();
        let mut state = CorpusState::default();
        for doc in jsonl::read_all::<Document>(&path)? {
            state.put(doc);
        }
        Ok(Self {
            path,
            state: RwLock::new(state),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Validates, persists, and returns a new document without an embedding.
    pub fn ingest_document(
        &self,
        raw_text: &str,
        doc_type: DocType,
        source_name: &str,
        cohort: Option<String>,
    ) -> Result<Document, CorpusError> {
        let doc = Document::new(raw_text, doc_type, source_name, cohort, None)?;
        self.insert(doc.clone())?;
        Ok(doc)
    }

    /// Persists a prepared document with a new id.
    pub fn insert(&self, doc: Document) -> Result<(), CorpusError> {
        let mut state = self.state.write();
        if state.by_id.contains_key(&doc.id) {
            return Err(CorpusError::DuplicateId(doc.id));
        }
        jsonl::append(&self.path, &doc)?;
        state.put(doc);
        Ok(())
    }

    /// Persists a new version of an existing document (e.g. once embedded).
    pub fn update(&self, doc: Document) -> Result<(), CorpusError> {
        let mut state = self.state.write();
        if !state.by_id.contains_key(&doc.id) {
            return Err(CorpusError::NotFound(doc.id));
        }
        jsonl::append(&self.path, &doc)?;
        state.put(doc);
        Ok(())
    }

    /// Inserts or replaces, used by crash recovery replays.
    pub fn upsert(&self, doc: Document) -> Result<(), CorpusError> {
        let mut state = self.state.write();
        if state.by_id.get(&doc.id).map(|&i| &state.docs[i]) == Some(&doc) {
            return Ok(());
        }
        jsonl::append(&self.path, &doc)?;
        state.put(doc);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<Document> {
        let state = self.state.read();
        state.by_id.get(id).map(|&i| state.docs[i].clone())
    }

    pub fn contains_digest(&self, digest: &str) -> bool {
        self.state.read().digests.contains(digest)
    }

    pub fn len(&self) -> usize {
        self.state.read().docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Documents in ingestion order, optionally filtered.
    pub fn list(&self, doc_type: Option<DocType>, cohort: Option<&str>) -> Vec<Document> {
        self.state
            .read()
            .docs
            .iter()
            .filter(|d| doc_type.is_none_or(|t| d.doc_type == t))
            .filter(|d| cohort.is_none_or(|c| d.cohort.as_deref() == Some(c)))
            .cloned()
            .collect()
    }

    /// Ingests every file whose trimmed body digest has not been seen.
    ///
    /// `default_doc_type` applies to files without a `doc_type` in front matter.
    pub fn scan_inbox(
        &self,
        dir: &Path,
        default_doc_type: Option<DocType>,
    ) -> Result<ScanReport, CorpusError> {
        let mut report = ScanReport::default();
        for prepared in prepare_inbox(dir, default_doc_type, |d| self.contains_digest(d))? {
            match prepared {
                Ok(doc) => {
                    self.insert(doc.clone())?;
                    report.documents.push(doc);
                }
                Err(e) => report.errors.push(e),
            }
        }
        Ok(report)
    }
}

/// Reads an inbox directory into unsaved documents, in file-name order.
///
/// Files whose digest is already known (per `seen`, or earlier in this scan)
/// are skipped. Per-file failures are returned in place, not raised.
pub fn prepare_inbox(
    dir: &Path,
    default_doc_type: Option<DocType>,
    seen: impl Fn(&str) -> bool,
) -> Result<Vec<Result<Document, (PathBuf, String)>>, CorpusError> {
    let entries = fs::read_dir(dir).map_err(|e| CorpusError::Io(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            !p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with('.'))
        })
        .filter(|p| !p.is_dir())
        .collect();
    paths.sort();

    let mut out = Vec::new();
    let mut batch_digests = HashSet::new();
    for path in paths {
        let content = match fs::read(&path) {
            Ok(bytes) => match String::from_utf8(bytes) {
                Ok(s) => s,
                Err(_) => {
                    out.push(Err((path, "file is not valid UTF-8".to_string())));
                    continue;
                }
            },
            Err(e) => {
                out.push(Err((path, e.to_string())));
                continue;
            }
        };
        let (meta, body) = split_front_matter(&content);
        let digest = text_digest(body);
        if seen(&digest) || !batch_digests.insert(digest) {
            continue;
        }
        let file_name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let doc_type = match meta.get("doc_type") {
            Some(t) => t.parse(),
            None => default_doc_type.ok_or_else(|| CorpusError::MissingDocType(file_name.clone())),
        };
        let built = doc_type.and_then(|t| {
            let source = meta.get("source_name").cloned().unwrap_or(file_name);
            Document::new(body, t, &source, meta.get("cohort").cloned(), None)
        });
        out.push(built.map_err(|e| (path, e.to_string())));
    }
    Ok(out)
}
