//! Grounded prompt assembly.

use serde::{Deserialize, Serialize};

use crate::rubric::{BandLabel, Rubric};
use crate::vindex::{rank_order, RetrievalResult};

use super::Submission;

/// Schema the model must answer with, quoted verbatim in every prompt.
pub const OUTPUT_SCHEMA: &str = r#"{"criteria":[{"criterion_id":"<id>","band":"<Excellent|Good|Satisfactory|NeedsImprovement>","percent":<number>,"comment":"<text>"}],"overall_comment":"<text>"}"#;

const SYSTEM_TEXT: &str = "You are an assessment assistant grading a student essay for an engineering course. \
Base every judgement only on the materials in this prompt: the rubric, the reference documents, and the essay. \
Do not use outside knowledge and do not invent evidence. \
For each rubric criterion choose exactly one band and a percent that lies inside that band's range, \
and write a specific, constructive comment. \
Do not compute a total; the grading engine does that.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionRole {
    Rubric,
    Evidence,
    Essay,
    OutputContract,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSection {
    pub role_tag: SectionRole,
    pub heading: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system_text: String,
    pub sections: Vec<PromptSection>,
}

impl Prompt {
    /// The user-turn text: every section as a `### heading` block.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            out.push_str("### ");
            out.push_str(&s.heading);
            out.push('\n');
            out.push_str(&s.body);
            out.push_str("\n\n");
        }
        out
    }

    pub fn sections_with(&self, role: SectionRole) -> impl Iterator<Item = &PromptSection> {
        self.sections.iter().filter(move |s| s.role_tag == role)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("evidence list has {results} results but {texts} texts")]
pub struct EvidenceMismatch {
    pub results: usize,
    pub texts: usize,
}

fn band_line(label: BandLabel, lo: f64, hi: f64, descriptor: &str) -> String {
    format!("- {label} ({lo}–{hi}%): {descriptor}")
}

/// Builds the prompt. Evidence is re-sorted by similarity desc, id asc.
pub fn assemble_prompt(
    submission: &Submission,
    rubric: &Rubric,
    evidence: &[RetrievalResult],
    evidence_texts: &[String],
) -> Result<Prompt, EvidenceMismatch> {
    if evidence.len() != evidence_texts.len() {
        return Err(EvidenceMismatch {
            results: evidence.len(),
            texts: evidence_texts.len(),
        });
    }
    let mut sections = Vec::new();
    for c in &rubric.criteria {
        let mut bands: Vec<_> = c.bands.iter().collect();
        bands.sort_by(|a, b| b.lo_percent.total_cmp(&a.lo_percent));
        let body = bands
            .iter()
            .map(|b| band_line(b.label, b.lo_percent, b.hi_percent, &b.descriptor))
            .collect::<Vec<_>>()
            .join("\n");
        sections.push(PromptSection {
            role_tag: SectionRole::Rubric,
            heading: format!("Rubric criterion `{}`: {} (weight {}%)", c.id, c.name, c.weight_percent),
            body,
        });
    }

    let mut paired: Vec<(&RetrievalResult, &String)> = evidence.iter().zip(evidence_texts).collect();
    paired.sort_by(|a, b| rank_order((a.0.similarity, &a.0.doc_id), (b.0.similarity, &b.0.doc_id)));
    for (i, (hit, text)) in paired.into_iter().enumerate() {
        sections.push(PromptSection {
            role_tag: SectionRole::Evidence,
            heading: format!(
                "Reference {}: {} `{}` (similarity {:.4})",
                i + 1,
                hit.doc_type,
                hit.doc_id,
                hit.similarity
            ),
            body: text.clone(),
        });
    }

    sections.push(PromptSection {
        role_tag: SectionRole::Essay,
        heading: format!("Student essay ({} words)", submission.word_count),
        body: submission.essay_text.clone(),
    });

    let ids = rubric
        .criteria
        .iter()
        .map(|c| format!("`{}`", c.id))
        .collect::<Vec<_>>()
        .join(", ");
    sections.push(PromptSection {
        role_tag: SectionRole::OutputContract,
        heading: "Output format".to_string(),
        body: format!(
            "Respond with a single JSON object and nothing else, matching this schema exactly:\n{OUTPUT_SCHEMA}\n\
             Include exactly one entry per criterion, using these criterion ids: {ids}. \
             `percent` is a number from 0 to 100 inside the chosen band's range."
        ),
    });

    Ok(Prompt {
        system_text: SYSTEM_TEXT.to_string(),
        sections,
    })
}
