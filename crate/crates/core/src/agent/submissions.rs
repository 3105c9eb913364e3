//! Submission store and grading queue.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::Submission;
use crate::jsonl::{self, JsonlError};

#[derive(Debug, thiserror::Error)]
pub enum SubmissionError {
    #[error("essay text is empty")]
    EmptyEssay,
    #[error("submission {0} not found")]
    NotFound(String),
    #[error(transparent)]
    Store(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SubmissionRecord {
    submission: Submission,
    queued: bool,
    /// Position in the grading queue; bumped on every enqueue.
    queue_seq: u64,
}

#[derive(Default)]
struct State {
    records: Vec<SubmissionRecord>,
    by_id: HashMap<String, usize>,
    next_seq: u64,
}

impl State {
    fn put(&mut self, rec: SubmissionRecord) {
        self.next_seq = self.next_seq.max(rec.queue_seq + 1);
        match self.by_id.get(&rec.submission.id) {
            Some(&i) => self.records[i] = rec,
            None => {
                self.by_id.insert(rec.submission.id.clone(), self.records.len());
                self.records.push(rec);
            }
        }
    }
}

/// Append-structured submission file. A submission is queued for grading on
/// creation and again when a reviewer asks for regeneration.
pub struct SubmissionStore {
    path: PathBuf,
    state: RwLock<State>,
}

impl SubmissionStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, SubmissionError> {
        let path = path.into();
        let mut state = State::default();
        for rec in jsonl::read_all::<SubmissionRecord>(&path)? {
            state.put(rec);
        }
        Ok(Self {
            path,
            state: RwLock::new(state),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Creates and queues a submission with a fresh id.
    pub fn create(
        &self,
        student_ref: &str,
        essay_text: &str,
        cohort: Option<String>,
    ) -> Result<Submission, SubmissionError> {
        let sub = Submission::new(uuid::Uuid::new_v4().to_string(), student_ref, essay_text, cohort)?;
        let mut state = self.state.write();
        let rec = SubmissionRecord {
            submission: sub.clone(),
            queued: true,
            queue_seq: state.next_seq,
        };
        jsonl::append(&self.path, &rec)?;
        state.put(rec);
        Ok(sub)
    }

    pub fn get(&self, id: &str) -> Option<Submission> {
        let state = self.state.read();
        state.by_id.get(id).map(|&i| state.records[i].submission.clone())
    }

    fn set_queued(&self, id: &str, queued: bool) -> Result<(), SubmissionError> {
        let mut state = self.state.write();
        let idx = *state
            .by_id
            .get(id)
            .ok_or_else(|| SubmissionError::NotFound(id.to_string()))?;
        let mut rec = state.records[idx].clone();
        if rec.queued == queued {
            return Ok(());
        }
        rec.queued = queued;
        if queued {
            rec.queue_seq = state.next_seq;
        }
        jsonl::append(&self.path, &rec)?;
        state.put(rec);
        Ok(())
    }

    pub fn enqueue(&self, id: &str) -> Result<(), SubmissionError> {
        self.set_queued(id, true)
    }

    pub fn mark_graded(&self, id: &str) -> Result<(), SubmissionError> {
        self.set_queued(id, false)
    }

    pub fn is_queued(&self, id: &str) -> bool {
        let state = self.state.read();
        state.by_id.get(id).is_some_and(|&i| state.records[i].queued)
    }

    /// Queued submissions, oldest enqueue first.
    pub fn queue(&self) -> Vec<Submission> {
        let state = self.state.read();
        let mut q: Vec<&SubmissionRecord> = state.records.iter().filter(|r| r.queued).collect();
        q.sort_by_key(|r| r.queue_seq);
        q.into_iter().map(|r| r.submission.clone()).collect()
    }

    pub fn queue_len(&self) -> usize {
        self.state.read().records.iter().filter(|r| r.queued).count()
    }

    pub fn len(&self) -> usize {
        self.state.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
