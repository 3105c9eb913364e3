//! Agreement and reliability statistics for paired human/machine scores.
//!
//! All standard deviations use the sample (n − 1) denominator. Differences
//! are always machine minus human, so a stricter machine gives a negative
//! mean difference.

use std::collections::HashMap;
use std::hash::Hash;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::rubric::{band_for_percent, Band, BandLabel, RubricError};

/// z-multiplier for 95% limits of agreement.
pub const LOA_Z: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("input is empty")]
    EmptyInput,
    #[error("both raters used a single identical category; kappa is undefined")]
    DegenerateMarginals,
    #[error("zero variance")]
    ZeroVariance,
    #[error("score {0} outside [0, 100]")]
    PercentOutOfRange(f64),
    #[error("matrix rows have unequal lengths")]
    RaggedMatrix,
    #[error("bad paired-score file: {0}")]
    Parse(String),
}

fn same_len(a: usize, b: usize) -> Result<(), StatsError> {
    if a != b {
        Err(StatsError::LengthMismatch(a, b))
    } else {
        Ok(())
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; caller guarantees `xs.len() >= 2`.
fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Cohen's kappa for two raters over arbitrary categories.
pub fn cohens_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64, StatsError> {
    same_len(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: a.len() });
    }
    let n = a.len() as f64;
    let mut marg: HashMap<&T, (usize, usize)> = HashMap::new();
    let mut agree = 0usize;
    for (x, y) in a.iter().zip(b) {
        marg.entry(x).or_default().0 += 1;
        marg.entry(y).or_default().1 += 1;
        if x == y {
            agree += 1;
        }
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = marg
        .values()
        .map(|&(ca, cb)| (ca as f64 / n) * (cb as f64 / n))
        .sum();
    if p_e >= 1.0 {
        return Err(StatsError::DegenerateMarginals);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Two-way ANOVA mean squares for an n × k matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnovaMeanSquares {
    pub rows: f64,
    pub columns: f64,
    pub error: f64,
}

pub fn two_way_mean_squares(matrix: &[Vec<f64>]) -> Result<AnovaMeanSquares, StatsError> {
    let n = matrix.len();
    let k = matrix.first().map_or(0, Vec::len);
    if matrix.iter().any(|r| r.len() != k) {
        return Err(StatsError::RaggedMatrix);
    }
    if n < 2 || k < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: n.min(k) });
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = matrix.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = matrix.iter().map(|r| mean(r)).collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| matrix.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();
    let ss_rows = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_err = 0.0;
    for (i, row) in matrix.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            ss_err += (x - row_means[i] - col_means[j] + grand).powi(2);
        }
    }
    Ok(AnovaMeanSquares {
        rows: ss_rows / (nf - 1.0),
        columns: ss_cols / (kf - 1.0),
        error: ss_err / ((nf - 1.0) * (kf - 1.0)),
    })
}

/// ICC(2,1): two-way random effects, absolute agreement, single rater.
/// `matrix[i][j]` is rater `j`'s score for subject `i`.
pub fn icc_2_1(matrix: &[Vec<f64>]) -> Result<f64, StatsError> {
    let ms = two_way_mean_squares(matrix)?;
    let n = matrix.len() as f64;
    let k = matrix[0].len() as f64;
    let denom = ms.rows + (k - 1.0) * ms.error + (k / n) * (ms.columns - ms.error);
    if denom == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((ms.rows - ms.error) / denom)
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    same_len(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: x.len() });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean absolute error and root mean square error of `machine` against `human`.
pub fn mae_rmse(human: &[f64], machine: &[f64]) -> Result<(f64, f64), StatsError> {
    same_len(human.len(), machine.len())?;
    if human.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n = human.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (h, m) in human.iter().zip(machine) {
        let d = m - h;
        abs += d.abs();
        sq += d * d;
    }
    Ok((abs / n, (sq / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub loa_lower: f64,
    pub loa_upper: f64,
}

impl BlandAltman {
    /// Limits from an already known mean and SD of the differences.
    pub fn from_moments(mean_diff: f64, sd_diff: f64) -> Self {
        let half = LOA_Z * sd_diff;
        Self {
            mean_diff,
            sd_diff,
            loa_lower: mean_diff - half,
            loa_upper: mean_diff + half,
        }
    }
}

pub fn bland_altman(human: &[f64], machine: &[f64]) -> Result<BlandAltman, StatsError> {
    same_len(human.len(), machine.len())?;
    if human.len() < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: human.len() });
    }
    let diffs: Vec<f64> = machine.iter().zip(human).map(|(m, h)| m - h).collect();
    Ok(BlandAltman::from_moments(mean(&diffs), sample_sd(&diffs)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptive {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

pub fn descriptive(xs: &[f64]) -> Result<Descriptive, StatsError> {
    if xs.len() < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: xs.len() });
    }
    Ok(Descriptive {
        mean: mean(xs),
        sd: sample_sd(xs),
        min: xs.iter().copied().fold(f64::INFINITY, f64::min),
        max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

pub fn bin_to_bands(scores: &[f64], bands: &[Band]) -> Result<Vec<BandLabel>, StatsError> {
    scores
        .iter()
        .map(|&s| {
            band_for_percent(bands, s).map_err(|e| match e {
                RubricError::PercentOutOfRange(p) => StatsError::PercentOutOfRange(p),
                other => StatsError::Parse(other.to_string()),
            })
        })
        .collect()
}

/// Two aligned score lists, rater A (human) and rater B (machine).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedScores {
    labels: Option<Vec<String>>,
    rater_a: Vec<f64>,
    rater_b: Vec<f64>,
}

impl PairedScores {
    pub fn new(
        labels: Option<Vec<String>>,
        rater_a: Vec<f64>,
        rater_b: Vec<f64>,
    ) -> Result<Self, StatsError> {
        same_len(rater_a.len(), rater_b.len())?;
        if let Some(l) = &labels {
            same_len(l.len(), rater_a.len())?;
        }
        if rater_a.len() < 2 {
            return Err(StatsError::InsufficientData { needed: 2, got: rater_a.len() });
        }
        if let Some(&bad) = rater_a
            .iter()
            .chain(&rater_b)
            .find(|v| !(0.0..=100.0).contains(*v))
        {
            return Err(StatsError::PercentOutOfRange(bad));
        }
        Ok(Self { labels, rater_a, rater_b })
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn rater_a(&self) -> &[f64] {
        &self.rater_a
    }

    pub fn rater_b(&self) -> &[f64] {
        &self.rater_b
    }

    pub fn len(&self) -> usize {
        self.rater_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rater_a.is_empty()
    }

    /// Parses `id,rater_a,rater_b` CSV.
    pub fn from_csv(reader: impl Read) -> Result<Self, StatsError> {
        let rows = read_score_csv(reader)?;
        let (ids, (a, b)): (Vec<String>, (Vec<f64>, Vec<f64>)) =
            rows.into_iter().map(|r| (r.id, (r.rater_a, r.rater_b))).unzip();
        Self::new(Some(ids), a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub rater_a: f64,
    pub rater_b: f64,
}

/// Reads raw `id,rater_a,rater_b` rows without pairing constraints.
pub fn read_score_csv(reader: impl Read) -> Result<Vec<ScoreRow>, StatsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| StatsError::Parse(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "rater_a", "rater_b"] {
        return Err(StatsError::Parse(format!(
            "expected header id,rater_a,rater_b, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| StatsError::Parse(e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub n: usize,
    pub kappa: Option<f64>,
    pub icc_2_1: Option<f64>,
    pub pearson_r: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub bland_altman: BlandAltman,
    pub approval_rate: Option<f64>,
    pub descriptive_a: Descriptive,
    pub descriptive_b: Descriptive,
}

fn defined(r: Result<f64, StatsError>) -> Result<Option<f64>, StatsError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(StatsError::DegenerateMarginals | StatsError::ZeroVariance) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs the whole battery. Kappa is computed on band bins of both raters.
pub fn reliability_report(
    pairs: &PairedScores,
    bands: &[Band],
    approval_rate: Option<f64>,
) -> Result<ReliabilityReport, StatsError> {
    let (a, b) = (pairs.rater_a(), pairs.rater_b());
    let bins_a = bin_to_bands(a, bands)?;
    let bins_b = bin_to_bands(b, bands)?;
    let matrix: Vec<Vec<f64>> = a.iter().zip(b).map(|(x, y)| vec![*x, *y]).collect();
    let (mae, rmse) = mae_rmse(a, b)?;
    Ok(ReliabilityReport {
        n: pairs.len(),
        kappa: defined(cohens_kappa(&bins_a, &bins_b))?,
        icc_2_1: defined(icc_2_1(&matrix))?,
        pearson_r: defined(pearson_r(a, b))?,
        mae,
        rmse,
        bland_altman: bland_altman(a, b)?,
        approval_rate,
        descriptive_a: descriptive(a)?,
        descriptive_b: descriptive(b)?,
    })
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl ReliabilityReport {
    /// JSON with full-precision fields plus a `display` block rounded to 2 decimals.
    pub fn to_json(&self) -> serde_json::Value {
        let full = serde_json::to_value(self).expect("report serializes");
        let mut display = full.clone();
        round_numbers(&mut display);
        if let Some(d) = display.as_object_mut() {
            d.remove("n");
        }
        let mut out = full;
        out.as_object_mut()
            .expect("report is an object")
            .insert("display".into(), display);
        out
    }
}

fn round_numbers(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if let Some(r) = serde_json::Number::from_f64(round2(f)) {
                    *n = r;
                }
            }
        }
        serde_json::Value::Object(map) => map.values_mut().for_each(round_numbers),
        serde_json::Value::Array(xs) => xs.iter_mut().for_each(round_numbers),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rubric::Rubric;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(cohens_kappa(&["A", "B", "C", "A"], &["A", "B", "C", "A"]).unwrap(), 1.0);
        let k = cohens_kappa(&["A", "A", "B", "B"], &["A", "B", "B", "B"]).unwrap();
        assert!(close(k, 0.5, 1e-15));
        assert_eq!(cohens_kappa(&["A"; 3], &["A"; 3]), Err(StatsError::DegenerateMarginals));
        assert_eq!(cohens_kappa(&["A"; 3], &["A"; 2]), Err(StatsError::LengthMismatch(3, 2)));
    }

    #[test]
    fn icc_examples() {
        let m = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let ms = two_way_mean_squares(&m).unwrap();
        assert!(close(ms.rows, 8.0, 1e-12));
        assert!(close(ms.columns, 1.5, 1e-12));
        assert!(close(ms.error, 0.0, 1e-12));
        assert!(close(icc_2_1(&m).unwrap(), 8.0 / 9.0, 1e-12));

        let same = vec![vec![60.0, 60.0], vec![70.0, 70.0], vec![85.0, 85.0]];
        assert_eq!(icc_2_1(&same).unwrap(), 1.0);

        let flat = vec![vec![5.0, 5.0], vec![5.0, 5.0]];
        assert_eq!(icc_2_1(&flat), Err(StatsError::ZeroVariance));
        assert!(matches!(icc_2_1(&[vec![1.0, 2.0]]), Err(StatsError::InsufficientData { .. })));
        assert!(matches!(icc_2_1(&[vec![1.0], vec![2.0]]), Err(StatsError::InsufficientData { .. })));
        assert_eq!(icc_2_1(&[vec![1.0, 2.0], vec![2.0]]), Err(StatsError::RaggedMatrix));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!(close(pearson_r(&x, &x).unwrap(), 1.0, 1e-15));
        let rev: Vec<f64> = x.iter().map(|v| -2.0 * v + 7.0).collect();
        assert!(close(pearson_r(&x, &rev).unwrap(), -1.0, 1e-15));
        assert!(close(pearson_r(&x, &[2.0, 1.0, 4.0, 3.0]).unwrap(), 0.6, 1e-15));
        assert_eq!(pearson_r(&x, &[1.0; 4]), Err(StatsError::ZeroVariance));
        assert_eq!(pearson_r(&x, &[1.0; 3]), Err(StatsError::LengthMismatch(4, 3)));
    }

    #[test]
    fn mae_rmse_examples() {
        assert_eq!(mae_rmse(&[70.0, 80.0], &[70.0, 80.0]).unwrap(), (0.0, 0.0));
        let (mae, rmse) = mae_rmse(&[70.0, 80.0, 90.0], &[72.0, 78.0, 90.0]).unwrap();
        assert!(close(mae, 4.0 / 3.0, 1e-12));
        assert!(close(rmse, (8.0f64 / 3.0).sqrt(), 1e-12));
        assert_eq!(mae_rmse(&[50.0], &[53.0]).unwrap(), (3.0, 3.0));
        assert_eq!(mae_rmse(&[], &[]), Err(StatsError::EmptyInput));
        assert_eq!(mae_rmse(&[1.0], &[]), Err(StatsError::LengthMismatch(1, 0)));
    }

    #[test]
    fn bland_altman_examples() {
        let human = [70.0, 80.0, 65.0];
        let machine = [68.0, 78.0, 63.0];
        let ba = bland_altman(&human, &machine).unwrap();
        assert_eq!((ba.mean_diff, ba.sd_diff, ba.loa_lower, ba.loa_upper), (-2.0, 0.0, -2.0, -2.0));

        let ba = bland_altman(&[60.0, 70.0, 80.0, 75.0], &[61.5, 66.0, 79.0, 71.0]).unwrap();
        assert_eq!(ba.loa_upper - ba.loa_lower, 2.0 * LOA_Z * ba.sd_diff);

        let ba = BlandAltman::from_moments(-1.8, 3.2653);
        assert!(close(ba.loa_lower, -8.2, 0.05));
        assert!(close(ba.loa_upper, 4.6, 0.05));
        assert!(matches!(bland_altman(&[1.0], &[1.0]), Err(StatsError::InsufficientData { .. })));
    }

    #[test]
    fn band_binning() {
        let bands = &Rubric::engineering_design().criteria[0].bands;
        use BandLabel::*;
        assert_eq!(
            bin_to_bands(&[90.0, 60.0, 75.0, 45.0], bands).unwrap(),
            [Excellent, Satisfactory, Good, NeedsImprovement]
        );
        assert_eq!(bin_to_bands(&[0.0, 100.0], bands).unwrap(), [NeedsImprovement, Excellent]);
        assert_eq!(bin_to_bands(&[79.999, 80.0], bands).unwrap(), [Good, Excellent]);
        assert_eq!(bin_to_bands(&[101.0], bands), Err(StatsError::PercentOutOfRange(101.0)));
    }

    #[test]
    fn identical_raters_report() {
        let a = vec![55.0, 62.0, 71.0, 83.0, 90.0, 47.0];
        let pairs = PairedScores::new(None, a.clone(), a).unwrap();
        let bands = &Rubric::engineering_design().criteria[0].bands;
        let r = reliability_report(&pairs, bands, None).unwrap();
        assert_eq!(r.pearson_r, Some(1.0));
        assert_eq!(r.mae, 0.0);
        assert_eq!(r.kappa, Some(1.0));
        assert_eq!(r.bland_altman.mean_diff, 0.0);
        assert_eq!(r.icc_2_1, Some(1.0));
    }

    #[test]
    fn undefined_metrics_are_absent() {
        // Everything in one band, constant machine score.
        let pairs = PairedScores::new(None, vec![85.0, 90.0, 95.0], vec![88.0, 88.0, 88.0]).unwrap();
        let bands = &Rubric::engineering_design().criteria[0].bands;
        let r = reliability_report(&pairs, bands, Some(0.9)).unwrap();
        assert_eq!(r.kappa, None);
        assert_eq!(r.pearson_r, None);
        assert!(r.icc_2_1.is_some());
        assert_eq!(r.approval_rate, Some(0.9));
        let json = r.to_json();
        assert!(json["kappa"].is_null());
        assert!(json["display"]["kappa"].is_null());
    }

    #[test]
    fn report_json_shape() {
        let pairs = PairedScores::new(None, vec![70.0, 80.0, 90.0], vec![72.0, 78.0, 90.0]).unwrap();
        let bands = &Rubric::engineering_design().criteria[0].bands;
        let json = reliability_report(&pairs, bands, None).unwrap().to_json();
        for key in ["n", "kappa", "icc_2_1", "pearson_r", "mae", "rmse", "bland_altman", "approval_rate", "descriptive_a", "descriptive_b", "display"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["display"]["mae"], serde_json::json!(1.33));
        assert!(json["mae"].as_f64().unwrap() != 1.33);
        assert!(json["bland_altman"]["loa_lower"].is_number());
    }

    #[test]
    fn paired_scores_validation() {
        assert!(matches!(PairedScores::new(None, vec![1.0], vec![1.0]), Err(StatsError::InsufficientData { .. })));
        assert_eq!(PairedScores::new(None, vec![1.0, 2.0], vec![1.0]), Err(StatsError::LengthMismatch(2, 1)));
        assert_eq!(
            PairedScores::new(None, vec![1.0, 120.0], vec![1.0, 2.0]),
            Err(StatsError::PercentOutOfRange(120.0))
        );
    }

    #[test]
    fn csv_parsing() {
        let csv = "id,rater_a,rater_b\ns1,70.5,72\ns2, 80 ,78.25\n";
        let p = PairedScores::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(p.labels().unwrap(), ["s1", "s2"]);
        assert_eq!(p.rater_b(), [72.0, 78.25]);
        assert!(PairedScores::from_csv("a,b,c\n1,2,3\n".as_bytes()).is_err());
        assert!(PairedScores::from_csv("id,rater_a,rater_b\ns1,x,1\ns2,1,1\n".as_bytes()).is_err());
    }
}
