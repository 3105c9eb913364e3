//! Rubric-grounded retrieval-augmented essay grading.
//!
//! Knowledge documents (rubrics, exemplar essays, instructor feedback) are
//! embedded into an exact vector index. Each submission retrieves its nearest
//! evidence, a language model scores it per rubric criterion, the engine
//! computes the weighted total, and a reviewer approves, edits or rejects the
//! result. Approved feedback is indexed again so later grading can draw on it.
//! [`stats`] holds the agreement measures used to compare machine and human
//! scores.

pub mod agent;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod engine;
pub mod jsonl;
pub mod review;
pub mod rubric;
pub mod stats;
pub mod vindex;

pub use config::ServiceConfig;
pub use engine::{BatchSummary, Engine, EngineError};
