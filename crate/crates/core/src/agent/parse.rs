//! Extraction and validation of the model's JSON answer.

use std::collections::HashMap;

use serde_json::{Map, Value};

use crate::rubric::{BandLabel, Criterion, CriterionScore, Rubric};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("no JSON object found in model output")]
    NoJsonObject,
    #[error("schema violation in `{field}`: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error("unknown criterion `{0}`")]
    UnknownCriterion(String),
    #[error("criterion {criterion}: {percent}% is not inside band {band} ({lo}–{hi}%)")]
    BandPercentMismatch {
        criterion: String,
        band: BandLabel,
        percent: f64,
        lo: f64,
        hi: f64,
    },
}

impl ParseError {
    fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ParseError::SchemaViolation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Instruction appended to the prompt when asking the model to retry.
    pub fn correction(&self) -> String {
        match self {
            ParseError::BandPercentMismatch { criterion, band, percent, lo, hi } => format!(
                "For criterion `{criterion}` you gave band {band} with {percent}%, but {band} covers \
                 {lo}–{hi}%. Choose a band and a percent that agree. Return the complete JSON object again."
            ),
            other => format!(
                "Your previous answer could not be accepted: {other}. Return only the JSON object in the required format."
            ),
        }
    }
}

/// Scores and overall comment as the model asserted them.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftAssessment {
    pub criterion_scores: Vec<CriterionScore>,
    pub overall_comment: String,
}

/// The first `{...}` in `raw` that parses as a JSON object.
fn extract_object(raw: &str) -> Option<Map<String, Value>> {
    for (i, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

fn non_empty_str<'a>(obj: &'a Map<String, Value>, field: &str, at: &str) -> Result<&'a str, ParseError> {
    match obj.get(field) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s),
        Some(Value::String(_)) => Err(ParseError::schema(at, "must not be empty")),
        Some(_) => Err(ParseError::schema(at, "must be a string")),
        None => Err(ParseError::schema(at, "missing")),
    }
}

fn check_band(c: &Criterion, band: BandLabel, percent: f64) -> Result<(), ParseError> {
    let actual = c
        .band_for_percent(percent)
        .map_err(|e| ParseError::schema("percent", e.to_string()))?;
    if actual != band {
        let (lo, hi) = c.effective_range(band).unwrap_or((0.0, 100.0));
        return Err(ParseError::BandPercentMismatch {
            criterion: c.id.clone(),
            band,
            percent,
            lo,
            hi,
        });
    }
    Ok(())
}

/// Parses raw model text against `rubric`. Scores come back in rubric order.
pub fn parse_agent_output(raw: &str, rubric: &Rubric) -> Result<DraftAssessment, ParseError> {
    let obj = extract_object(raw).ok_or(ParseError::NoJsonObject)?;
    let entries = match obj.get("criteria") {
        Some(Value::Array(a)) => a,
        Some(_) => return Err(ParseError::schema("criteria", "must be an array")),
        None => return Err(ParseError::schema("criteria", "missing")),
    };
    if entries.len() != rubric.criteria.len() {
        return Err(ParseError::schema(
            "criteria",
            format!("expected {} entries, got {}", rubric.criteria.len(), entries.len()),
        ));
    }

    let mut parsed: HashMap<String, CriterionScore> = HashMap::new();
    for (i, entry) in entries.iter().enumerate() {
        let at = |f: &str| format!("criteria[{i}].{f}");
        let e = entry
            .as_object()
            .ok_or_else(|| ParseError::schema(format!("criteria[{i}]"), "must be an object"))?;
        let id = non_empty_str(e, "criterion_id", &at("criterion_id"))?;
        if rubric.criterion(id).is_none() {
            return Err(ParseError::UnknownCriterion(id.to_string()));
        }
        let band: BandLabel = non_empty_str(e, "band", &at("band"))?
            .parse()
            .map_err(|reason: String| ParseError::schema(at("band"), reason))?;
        let percent = e
            .get("percent")
            .and_then(Value::as_f64)
            .ok_or_else(|| ParseError::schema(at("percent"), "must be a number"))?;
        if !(0.0..=100.0).contains(&percent) {
            return Err(ParseError::schema(at("percent"), format!("{percent} outside [0, 100]")));
        }
        let comment = non_empty_str(e, "comment", &at("comment"))?;
        let score = CriterionScore {
            criterion_id: id.to_string(),
            band,
            percent,
            comment: comment.to_string(),
        };
        if parsed.insert(id.to_string(), score).is_some() {
            return Err(ParseError::schema(at("criterion_id"), format!("duplicate criterion `{id}`")));
        }
    }
    let overall = non_empty_str(&obj, "overall_comment", "overall_comment")?.to_string();

    let mut scores = Vec::with_capacity(rubric.criteria.len());
    for c in &rubric.criteria {
        let s = parsed
            .remove(&c.id)
            .ok_or_else(|| ParseError::schema("criteria", format!("no entry for `{}`", c.id)))?;
        check_band(c, s.band, s.percent)?;
        scores.push(s);
    }
    Ok(DraftAssessment {
        criterion_scores: scores,
        overall_comment: overall,
    })
}
