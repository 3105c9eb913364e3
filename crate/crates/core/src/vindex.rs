//! Exact cosine top-k index over embedded documents.
//!
//! A flat scan: every query scores every stored vector. Results are ordered by
//! similarity descending, then doc id ascending.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocType, Document};
use crate::embedding::{EmbeddingError, EmbeddingVector};
use crate::jsonl::{self, JsonlError};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("document {0} has no embedding")]
    MissingEmbedding(String),
    #[error("dimension mismatch: index has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("i/o failure: {0}")]
    IoFailure(String),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
}

impl From<JsonlError> for IndexError {
    fn from(e: JsonlError) -> Self {
        match e {
            JsonlError::Io { .. } => IndexError::IoFailure(e.to_string()),
            JsonlError::Malformed { .. } | JsonlError::Digest { .. } => {
                IndexError::CorruptIndex(e.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub doc_id: String,
    pub doc_type: DocType,
    pub similarity: f64,
    pub rank: usize,
}

/// Allowed doc types; empty means all.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFilter {
    pub allowed_doc_types: BTreeSet<DocType>,
}

impl QueryFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn only(types: impl IntoIterator<Item = DocType>) -> Self {
        Self {
            allowed_doc_types: types.into_iter().collect(),
        }
    }

    pub fn admits(&self, t: DocType) -> bool {
        self.allowed_doc_types.is_empty() || self.allowed_doc_types.contains(&t)
    }
}

/// Descending similarity, ascending id.
pub fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// In-memory flat index.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dims: usize,
    docs: BTreeMap<String, Document>,
}

impl FlatIndex {
    pub fn new(dims: usize) -> Self {
        Self {
            dims,
            docs: BTreeMap::new(),
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.docs.get(id)
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.docs.values()
    }

    fn check(&self, doc: &Document) -> Result<(), IndexError> {
        let emb = doc
            .embedding
            .as_ref()
            .ok_or_else(|| IndexError::MissingEmbedding(doc.id.clone()))?;
        if emb.dims() != self.dims {
            return Err(IndexError::DimensionMismatch {
                expected: self.dims,
                actual: emb.dims(),
            });
        }
        Ok(())
    }

    pub fn upsert(&mut self, doc: Document) -> Result<(), IndexError> {
        self.check(&doc)?;
        self.docs.insert(doc.id.clone(), doc);
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> bool {
        self.docs.remove(id).is_some()
    }

    pub fn query(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: &QueryFilter,
    ) -> Result<Vec<RetrievalResult>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.dims() != self.dims {
            return Err(IndexError::DimensionMismatch {
                expected: self.dims,
                actual: query.dims(),
            });
        }
        let mut scored: Vec<(f64, &Document)> = Vec::new();
        for doc in self.docs.values().filter(|d| filter.admits(d.doc_type)) {
            let emb = doc.embedding.as_ref().expect("indexed docs carry embeddings");
            let sim = emb.dot(query).map_err(|e| match e {
                EmbeddingError::DimensionMismatch { expected, actual } => {
                    IndexError::DimensionMismatch { expected, actual }
                }
                other => IndexError::CorruptIndex(other.to_string()),
            })?;
            scored.push((sim.clamp(-1.0, 1.0), doc));
        }
        scored.sort_by(|a, b| rank_order((a.0, &a.1.id), (b.0, &b.1.id)));
        Ok(scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (similarity, doc))| RetrievalResult {
                doc_id: doc.id.clone(),
                doc_type: doc.doc_type,
                similarity,
                rank: i + 1,
            })
            .collect())
    }

    pub fn persist(&self, path: &Path) -> Result<(), IndexError> {
        let docs: Vec<&Document> = self.docs.values().collect();
        jsonl::write_sealed(path, &docs)?;
        Ok(())
    }

    pub fn load(path: &Path, dims: usize) -> Result<Self, IndexError> {
        let mut index = Self::new(dims);
        for doc in jsonl::read_sealed::<Document>(path)? {
            index.upsert(doc).map_err(|e| IndexError::CorruptIndex(e.to_string()))?;
        }
        Ok(index)
    }
}

/// File-backed index; every write is durable before it returns.
///
/// Queries take a read lock, writes a write lock, so a query sees the index
/// either before or after any write.
pub struct VectorIndex {
    path: PathBuf,
    inner: RwLock<FlatIndex>,
}

impl VectorIndex {
    /// Loads `path` if it exists, otherwise starts empty and writes it.
    pub fn open(path: impl Into<PathBuf>, dims: usize) -> Result<Self, IndexError> {
        let path = path.into();
        let inner = if path.exists() {
            FlatIndex::load(&path, dims)?
        } else {
            let idx = FlatIndex::new(dims);
            idx.persist(&path)?;
            idx
        };
        Ok(Self {
            path,
            inner: RwLock::new(inner),
        })
    }

    pub fn dims(&self) -> usize {
        self.inner.read().dims()
    }

    pub fn len(&self) -> usize {
        self.inner.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: &str) -> Option<Document> {
        self.inner.read().get(id).cloned()
    }

    pub fn snapshot(&self) -> FlatIndex {
        self.inner.read().clone()
    }

    pub fn upsert(&self, doc: Document) -> Result<(), IndexError> {
        let mut guard = self.inner.write();
        let mut next = guard.clone();
        next.upsert(doc)?;
        next.persist(&self.path)?;
        *guard = next;
        Ok(())
    }

    pub fn remove(&self, id: &str) -> Result<bool, IndexError> {
        let mut guard = self.inner.write();
        if guard.get(id).is_none() {
            return Ok(false);
        }
        let mut next = guard.clone();
        next.remove(id);
        next.persist(&self.path)?;
        *guard = next;
        Ok(true)
    }

    pub fn query(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: &QueryFilter,
    ) -> Result<Vec<RetrievalResult>, IndexError> {
        self.inner.read().query(query, k, filter)
    }

    /// Query plus the matched documents, from one consistent view.
    pub fn query_with_documents(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: &QueryFilter,
    ) -> Result<Vec<(RetrievalResult, Document)>, IndexError> {
        let guard = self.inner.read();
        let hits = guard.query(query, k, filter)?;
        Ok(hits
            .into_iter()
            .map(|hit| {
                let doc = guard.get(&hit.doc_id).expect("hit refers to an indexed doc").clone();
                (hit, doc)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Embedder, ReferenceEmbedder};

    fn doc(id: &str, t: DocType, v: &[f64]) -> Document {
        let mut d = Document::new(id, t, id, None, None).unwrap();
        d.id = id.to_string();
        d.embedding = Some(EmbeddingVector::normalized(v.to_vec()).unwrap());
        d
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = FlatIndex::new(3);
        let q = EmbeddingVector::normalized(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(idx.query(&q, 5, &QueryFilter::all()).unwrap().is_empty());
    }

    #[test]
    fn self_retrieval_at_rank_one() {
        let e = ReferenceEmbedder::default();
        let mut idx = FlatIndex::new(e.dims());
        for (i, text) in ["beam deflection analysis", "heat exchanger design", "gear train ratio"]
            .iter()
            .enumerate()
        {
            let mut d = Document::new(text, DocType::ExemplarEssay, "x", None, None).unwrap();
            d.id = format!("d{i}");
            d.embedding = Some(e.embed(text).unwrap());
            idx.upsert(d).unwrap();
        }
        let q = e.embed("heat exchanger design").unwrap();
        let hits = idx.query(&q, 5, &QueryFilter::all()).unwrap();
        assert_eq!(hits[0].doc_id, "d1");
        assert!((hits[0].similarity - 1.0).abs() < 1e-9);
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn upsert_replaces_same_id() {
        let mut idx = FlatIndex::new(2);
        idx.upsert(doc("a", DocType::Rubric, &[1.0, 0.0])).unwrap();
        idx.upsert(doc("a", DocType::Rubric, &[0.0, 1.0])).unwrap();
        assert_eq!(idx.len(), 1);
        let q = EmbeddingVector::normalized(vec![0.0, 1.0]).unwrap();
        let hits = idx.query(&q, 1, &QueryFilter::all()).unwrap();
        assert!((hits[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_dims_and_missing_embedding() {
        let mut idx = FlatIndex::new(256);
        let d = doc("a", DocType::Rubric, &vec![1.0; 128]);
        assert!(matches!(
            idx.upsert(d),
            Err(IndexError::DimensionMismatch { expected: 256, actual: 128 })
        ));
        let mut bare = doc("b", DocType::Rubric, &[1.0]);
        bare.embedding = None;
        assert!(matches!(idx.upsert(bare), Err(IndexError::MissingEmbedding(_))));
        let q = EmbeddingVector::normalized(vec![1.0; 8]).unwrap();
        assert!(matches!(
            idx.query(&q, 1, &QueryFilter::all()),
            Err(IndexError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn filter_restricts_types() {
        let mut idx = FlatIndex::new(2);
        for i in 0..3 {
            idx.upsert(doc(&format!("r{i}"), DocType::Rubric, &[1.0, i as f64])).unwrap();
            idx.upsert(doc(&format!("e{i}"), DocType::ExemplarEssay, &[1.0, -(i as f64)])).unwrap();
        }
        let q = EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap();
        let hits = idx
            .query(&q, 5, &QueryFilter::only([DocType::ExemplarEssay]))
            .unwrap();
        assert_eq!(hits.len(), 3);
        assert!(hits.iter().all(|h| h.doc_type == DocType::ExemplarEssay));
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let mut idx = FlatIndex::new(2);
        for id in ["c", "a", "b"] {
            idx.upsert(doc(id, DocType::Rubric, &[1.0, 0.0])).unwrap();
        }
        let q = EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap();
        let ids: Vec<_> = idx
            .query(&q, 3, &QueryFilter::all())
            .unwrap()
            .into_iter()
            .map(|h| h.doc_id)
            .collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn remove_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let idx = VectorIndex::open(dir.path().join("i.jsonl"), 2).unwrap();
        assert!(!idx.remove("a").unwrap());
        idx.upsert(doc("a", DocType::Rubric, &[1.0, 0.0])).unwrap();
        assert!(idx.remove("a").unwrap());
        assert!(!idx.remove("a").unwrap());
        let q = EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap();
        assert!(idx.query(&q, 5, &QueryFilter::all()).unwrap().is_empty());
        let reloaded = VectorIndex::open(dir.path().join("i.jsonl"), 2).unwrap();
        assert!(reloaded.is_empty());
    }

    #[test]
    fn k_zero_rejected() {
        let idx = FlatIndex::new(2);
        let q = EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap();
        assert!(matches!(idx.query(&q, 0, &QueryFilter::all()), Err(IndexError::InvalidK)));
    }

    #[test]
    fn persist_empty_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.jsonl");
        FlatIndex::new(4).persist(&path).unwrap();
        assert_eq!(FlatIndex::load(&path, 4).unwrap().len(), 0);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.jsonl");
        let mut idx = FlatIndex::new(2);
        for i in 0..4 {
            idx.upsert(doc(&format!("d{i}"), DocType::Rubric, &[1.0, i as f64])).unwrap();
        }
        idx.persist(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(FlatIndex::load(&path, 2), Err(IndexError::CorruptIndex(_))));
        assert!(matches!(VectorIndex::open(&path, 2), Err(IndexError::CorruptIndex(_))));
    }

    #[test]
    fn missing_file_load_is_io_failure() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            FlatIndex::load(&dir.path().join("nope"), 2),
            Err(IndexError::IoFailure(_))
        ));
    }
}
