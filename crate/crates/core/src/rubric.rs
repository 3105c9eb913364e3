//! Weighted rubrics, performance bands and total arithmetic.
//!
//! Band ranges are authored as printed integer ranges (80–100, 65–79, ...).
//! For real-valued percents each band covers `[lo, next_lo)`, the top band
//! `[lo, 100]`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BandLabel {
    Excellent,
    Good,
    Satisfactory,
    NeedsImprovement,
}

impl BandLabel {
    pub const ALL: [BandLabel; 4] = [
        BandLabel::Excellent,
        BandLabel::Good,
        BandLabel::Satisfactory,
        BandLabel::NeedsImprovement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BandLabel::Excellent => "Excellent",
            BandLabel::Good => "Good",
            BandLabel::Satisfactory => "Satisfactory",
            BandLabel::NeedsImprovement => "NeedsImprovement",
        }
    }
}

impl fmt::Display for BandLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BandLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BandLabel::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| format!("unknown band `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub label: BandLabel,
    pub lo_percent: f64,
    pub hi_percent: f64,
    pub descriptor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: String,
    pub name: String,
    pub weight_percent: f64,
    pub bands: Vec<Band>,
}

impl Criterion {
    pub fn band(&self, label: BandLabel) -> Option<&Band> {
        self.bands.iter().find(|b| b.label == label)
    }

    pub fn band_for_percent(&self, percent: f64) -> Result<BandLabel, RubricError> {
        band_for_percent(&self.bands, percent)
    }

    /// Real-valued interval covered by `label` under the half-open convention.
    pub fn effective_range(&self, label: BandLabel) -> Option<(f64, f64)> {
        let mut sorted: Vec<&Band> = self.bands.iter().collect();
        sorted.sort_by(|a, b| a.lo_percent.total_cmp(&b.lo_percent));
        let pos = sorted.iter().position(|b| b.label == label)?;
        let hi = sorted.get(pos + 1).map_or(100.0, |n| n.lo_percent);
        Some((sorted[pos].lo_percent, hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rubric {
    pub id: String,
    pub title: String,
    pub criteria: Vec<Criterion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionScore {
    pub criterion_id: String,
    pub band: BandLabel,
    pub percent: f64,
    pub comment: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoCriteria,
    WeightSumInvalid { sum: f64 },
    WeightOutOfRange { criterion: String, weight: f64 },
    DuplicateCriterion { criterion: String },
    BandCoverageInvalid { criterion: String, reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoCriteria => write!(f, "rubric has no criteria"),
            Violation::WeightSumInvalid { sum } => write!(f, "weights sum to {sum}, expected 100"),
            Violation::WeightOutOfRange { criterion, weight } => {
                write!(f, "{criterion}: weight {weight} outside (0, 100]")
            }
            Violation::DuplicateCriterion { criterion } => {
                write!(f, "duplicate criterion id {criterion}")
            }
            Violation::BandCoverageInvalid { criterion, reason } => {
                write!(f, "{criterion}: {reason}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RubricError {
    #[error("invalid rubric: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("percent {0} outside [0, 100]")]
    PercentOutOfRange(f64),
    #[error("no score for criterion {0}")]
    MissingCriterionScore(String),
    #[error("unexpected or duplicate score for criterion {0}")]
    ExtraCriterionScore(String),
    #[error("criterion {criterion}: {percent}% is not in band {band}")]
    BandPercentMismatch {
        criterion: String,
        band: BandLabel,
        percent: f64,
    },
    #[error("criterion {0}: comment is empty")]
    EmptyComment(String),
    #[error("cannot load rubric: {0}")]
    Load(String),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl RubricError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            RubricError::Invalid(v) => v,
            _ => &[],
        }
    }
}

fn check_bands(c: &Criterion, out: &mut Vec<Violation>) {
    let bad = |reason: String| Violation::BandCoverageInvalid {
        criterion: c.id.clone(),
        reason,
    };
    let labels: HashSet<BandLabel> = c.bands.iter().map(|b| b.label).collect();
    if c.bands.len() != 4 || labels.len() != 4 {
        out.push(bad(format!(
            "expected the four band labels exactly once, got {}",
            c.bands.len()
        )));
        return;
    }
    if c.bands.iter().any(|b| !(b.lo_percent.is_finite() && b.hi_percent.is_finite())) {
        out.push(bad("non-finite band bound".into()));
        return;
    }
    let mut sorted: Vec<&Band> = c.bands.iter().collect();
    sorted.sort_by(|a, b| a.lo_percent.total_cmp(&b.lo_percent));
    if sorted[0].lo_percent != 0.0 {
        out.push(bad(format!("lowest band starts at {}, not 0", sorted[0].lo_percent)));
    }
    let top = sorted[sorted.len() - 1];
    if top.hi_percent != 100.0 {
        out.push(bad(format!("top band ends at {}, not 100", top.hi_percent)));
    }
    for b in &sorted {
        if b.lo_percent >= b.hi_percent {
            out.push(bad(format!("{} has empty range", b.label)));
        }
    }
    for pair in sorted.windows(2) {
        let (lower, upper) = (pair[0], pair[1]);
        if lower.hi_percent > upper.lo_percent {
            out.push(bad(format!(
                "{} ({}–{}) overlaps {} ({}–{})",
                lower.label, lower.lo_percent, lower.hi_percent, upper.label, upper.lo_percent, upper.hi_percent
            )));
        } else if upper.lo_percent - lower.hi_percent > 1.0 {
            out.push(bad(format!(
                "gap between {} and {}",
                lower.label, upper.label
            )));
        }
    }
}

/// Checks every rubric invariant, reporting all violations together.
pub fn validate_rubric(rubric: &Rubric) -> Result<(), RubricError> {
    let mut v = Vec::new();
    if rubric.criteria.is_empty() {
        v.push(Violation::NoCriteria);
    }
    let mut seen = HashSet::new();
    for c in &rubric.criteria {
        if !seen.insert(c.id.as_str()) {
            v.push(Violation::DuplicateCriterion {
                criterion: c.id.clone(),
            });
        }
        if !(c.weight_percent > 0.0 && c.weight_percent <= 100.0) {
            v.push(Violation::WeightOutOfRange {
                criterion: c.id.clone(),
                weight: c.weight_percent,
            });
        }
        check_bands(c, &mut v);
    }
    let sum: f64 = rubric.criteria.iter().map(|c| c.weight_percent).sum();
    if !rubric.criteria.is_empty() && (sum - 100.0).abs() > WEIGHT_SUM_TOLERANCE {
        v.push(Violation::WeightSumInvalid { sum });
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(RubricError::Invalid(v))
    }
}

/// Maps a percent to the band whose half-open interval contains it.
pub fn band_for_percent(bands: &[Band], percent: f64) -> Result<BandLabel, RubricError> {
    if !(0.0..=100.0).contains(&percent) {
        return Err(RubricError::PercentOutOfRange(percent));
    }
    bands
        .iter()
        .filter(|b| b.lo_percent <= percent)
        .max_by(|a, b| a.lo_percent.total_cmp(&b.lo_percent))
        .map(|b| b.label)
        .ok_or(RubricError::PercentOutOfRange(percent))
}

/// Checks one score against its criterion: range, band agreement, comment.
pub fn check_score(criterion: &Criterion, score: &CriterionScore) -> Result<(), RubricError> {
    let actual = criterion.band_for_percent(score.percent)?;
    if actual != score.band {
        return Err(RubricError::BandPercentMismatch {
            criterion: criterion.id.clone(),
            band: score.band,
            percent: score.percent,
        });
    }
    if score.comment.trim().is_empty() {
        return Err(RubricError::EmptyComment(criterion.id.clone()));
    }
    Ok(())
}

/// Σ percent × weight / 100 over criteria, after validating every score.
pub fn weighted_total(rubric: &Rubric, scores: &[CriterionScore]) -> Result<f64, RubricError> {
    let mut by_id: HashMap<&str, &CriterionScore> = HashMap::new();
    for s in scores {
        let known = rubric.criteria.iter().any(|c| c.id == s.criterion_id);
        if !known || by_id.insert(&s.criterion_id, s).is_some() {
            return Err(RubricError::ExtraCriterionScore(s.criterion_id.clone()));
        }
    }
    let mut total = 0.0;
    for c in &rubric.criteria {
        let s = by_id
            .get(c.id.as_str())
            .ok_or_else(|| RubricError::MissingCriterionScore(c.id.clone()))?;
        check_score(c, s)?;
        total += s.percent * c.weight_percent / 100.0;
    }
    Ok(total)
}

/// One decimal with a percent sign, e.g. `72.0%`.
pub fn format_percent(total: f64) -> String {
    format!("{total:.1}%")
}

impl Rubric {
    pub fn criterion(&self, id: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.id == id)
    }

    pub fn from_json(text: &str) -> Result<Self, RubricError> {
        let rubric: Rubric = serde_json::from_str(text).map_err(|e| RubricError::Load(e.to_string()))?;
        validate_rubric(&rubric)?;
        Ok(rubric)
    }

    pub fn load(path: &Path) -> Result<Self, RubricError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RubricError::Load(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The five-criterion engineering design essay rubric shipped as default.
    pub fn engineering_design() -> Self {
        Self::from_json(DEFAULT_RUBRIC_JSON).expect("bundled rubric is valid")
    }
}

pub const DEFAULT_RUBRIC_JSON: &str = include_str!("../fixtures/rubric_engineering_design.json");
