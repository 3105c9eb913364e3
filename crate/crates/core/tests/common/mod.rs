#![allow(dead_code)]

pub mod oracle;

use std::path::Path;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rubrag_core::agent::{Script, ScriptedProvider};
use rubrag_core::corpus::{DocType, Document, Provenance};
use rubrag_core::embedding::{Embedder, EmbeddingVector, ReferenceEmbedder};
use rubrag_core::rubric::Rubric;
use rubrag_core::{Engine, ServiceConfig};
use serde_json::json;

pub const WORKED_PROFILE: [(&str, f64); 5] = [
    ("Excellent", 90.0),
    ("Satisfactory", 60.0),
    ("Good", 75.0),
    ("NeedsImprovement", 45.0),
    ("Excellent", 90.0),
];

const TOPIC_WORDS: &[&str] = &[
    "bridge", "truss", "load", "beam", "stress", "strain", "thermal", "fluid", "pump", "valve",
    "circuit", "sensor", "feedback", "controller", "gear", "torque", "bearing", "weld", "concrete",
    "steel", "timber", "composite", "fatigue", "vibration", "damping", "prototype", "tolerance",
    "safety", "factor", "efficiency", "energy", "solar", "battery", "drone", "robot", "actuator",
    "hydraulic", "pressure", "flow", "heat", "exchanger", "turbine", "rotor", "blade", "frame",
    "chassis", "suspension", "insulation", "membrane", "filter",
];

const GLUE_WORDS: &[&str] = &[
    "the", "design", "because", "we", "tested", "analysis", "shows", "that", "a", "of", "and",
    "requirement", "constraint", "model", "result", "improve", "future", "reflect", "problem",
];

/// Deterministic synthetic essay; distinct seeds give distinct vocabulary mixes.
pub fn synthetic_essay(seed: u64, words: usize) -> String {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(words + 1);
    out.push(format!("essay{seed}"));
    for _ in 0..words {
        if rng.random_bool(0.35) {
            out.push(GLUE_WORDS[rng.random_range(0..GLUE_WORDS.len())].to_string());
        } else if rng.random_bool(0.3) {
            out.push(format!("term{}", rng.random_range(0..400)));
        } else {
            out.push(TOPIC_WORDS[rng.random_range(0..TOPIC_WORDS.len())].to_string());
        }
    }
    out.join(" ")
}

/// Model answer with the given `(band, percent)` per criterion, in rubric order.
pub fn scripted_answer(rubric: &Rubric, profile: &[(&str, f64)]) -> String {
    json!({
        "criteria": rubric.criteria.iter().zip(profile).map(|(c, (band, pct))| json!({
            "criterion_id": c.id,
            "band": band,
            "percent": pct,
            "comment": format!("{} is {} in this essay.", c.name, band.to_lowercase()),
        })).collect::<Vec<_>>(),
        "overall_comment": "Clear problem framing; reflection needs more depth.",
    })
    .to_string()
}

pub fn worked_answer() -> String {
    scripted_answer(&Rubric::engineering_design(), &WORKED_PROFILE)
}

pub struct Harness {
    pub engine: Engine,
    pub provider: Arc<ScriptedProvider>,
}

pub fn config(dir: &Path) -> ServiceConfig {
    let mut cfg = ServiceConfig::with_data_dir(dir);
    cfg.parallelism = 4;
    cfg
}

/// Engine over `dir` whose provider answers the worked 90/60/75/45/90 profile by default.
pub fn harness(dir: &Path) -> Harness {
    harness_with(config(dir))
}

pub fn harness_with(cfg: ServiceConfig) -> Harness {
    let provider = Arc::new(ScriptedProvider::new(Script {
        default: Some(worked_answer()),
        ..Script::default()
    }));
    let engine = Engine::open_with_provider(cfg, provider.clone()).expect("engine opens");
    Harness { engine, provider }
}

/// Seeds the corpus with the rubric descriptors and a few reference essays.
pub fn seed_corpus(engine: &Engine) {
    for c in &engine.rubric.criteria {
        let text = c
            .bands
            .iter()
            .map(|b| format!("{} {}: {}", c.name, b.label, b.descriptor))
            .collect::<Vec<_>>()
            .join("\n");
        engine
            .ingest_text(&text, DocType::Rubric, &format!("rubric:{}", c.id), None)
            .unwrap();
    }
    for i in 0..5 {
        engine
            .ingest_text(&synthetic_essay(10_000 + i, 150), DocType::ExemplarEssay, &format!("ref{i}"), None)
            .unwrap();
    }
}

/// `|a - b| <= tol * max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// `n` reference-embedded documents of mixed types. Every tenth document
/// repeats an earlier text so exact similarity ties occur.
pub fn retrieval_corpus(seed: u64, n: usize) -> Vec<Document> {
    let embedder = ReferenceEmbedder::default();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut docs: Vec<Document> = Vec::with_capacity(n);
    for i in 0..n {
        let text = if i % 10 == 9 {
            docs[rng.random_range(0..i)].text.clone()
        } else {
            synthetic_essay(seed * 1_000 + i as u64, rng.random_range(5..60))
        };
        let doc_type = DocType::ALL[rng.random_range(0..DocType::ALL.len())];
        let provenance = (doc_type == DocType::ApprovedFeedback).then(|| Provenance {
            submission_id: format!("sub{i}"),
            reviewer_id: "r".into(),
            approved_at: chrono::Utc::now(),
        });
        let mut d = Document::new(&text, doc_type, &format!("doc{i}"), None, provenance).unwrap();
        d.id = format!("doc{i:03}");
        d.embedding = Some(embedder.embed(&d.text).unwrap());
        docs.push(d);
    }
    docs
}

/// Scores every admitted document and sorts by similarity, then id.
pub fn brute_force_top_k(
    docs: &[Document],
    query: &EmbeddingVector,
    k: usize,
    admit: impl Fn(DocType) -> bool,
) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = Vec::new();
    for d in docs.iter().filter(|d| admit(d.doc_type)) {
        let v = d.embedding.as_ref().unwrap().values();
        let mut dot = 0.0;
        for (a, b) in v.iter().zip(query.values()) {
            dot += a * b;
        }
        all.push((d.id.clone(), dot));
    }
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}
