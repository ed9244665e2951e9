use std::fmt;

use serde::{Deserialize, Serialize};

use super::TrainError;

/// Binary evaluation summary; class 1 is the positive (pathological) class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub uar: f64,
    pub auc: f64,
    pub per_class_recall: [f64; 2],
    /// `confusion[truth][pred]`
    pub confusion: [[usize; 2]; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// (false-positive rate, true-positive rate), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
}

fn class_counts(truth: &[usize]) -> Result<[usize; 2], TrainError> {
    let mut counts = [0usize; 2];
    for &t in truth {
        if t > 1 {
            return Err(TrainError::Metric(format!("label {t} is not binary")));
        }
        counts[t] += 1;
    }
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(TrainError::Metric(format!("class {c} absent from truth; recall is undefined")));
        }
    }
    Ok(counts)
}

pub fn confusion(truth: &[usize], pred: &[usize]) -> Result<[[usize; 2]; 2], TrainError> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(TrainError::Metric(format!(
            "truth has {} labels, predictions {}",
            truth.len(),
            pred.len()
        )));
    }
    let mut m = [[0; 2]; 2];
    for (&t, &p) in truth.iter().zip(pred) {
        if t > 1 || p > 1 {
            return Err(TrainError::Metric(format!("labels must be 0 or 1, got ({t}, {p})")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

pub fn per_class_recall(truth: &[usize], pred: &[usize]) -> Result<[f64; 2], TrainError> {
    let m = confusion(truth, pred)?;
    let counts = class_counts(truth)?;
    Ok([0, 1].map(|c| m[c][c] as f64 / counts[c] as f64))
}

/// Mean of per-class recalls.
pub fn uar(truth: &[usize], pred: &[usize]) -> Result<f64, TrainError> {
    let r = per_class_recall(truth, pred)?;
    Ok((r[0] + r[1]) / 2.0)
}

/// ROC over the sorted unique score thresholds and its trapezoidal area.
/// Tied scores form one diagonal segment, so the area equals
/// `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)`. Areas are summed in integer units and
/// divided once, so the value is exact for small sets.
pub fn roc_auc(truth: &[usize], scores: &[f64]) -> Result<(RocCurve, f64), TrainError> {
    if truth.len() != scores.len() {
        return Err(TrainError::Metric(format!(
            "{} labels but {} scores",
            truth.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TrainError::Metric("NaN score".into()));
    }
    let [neg, pos] = class_counts(truth)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area = 0u64;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if truth[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) * (tp + tp0);
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = twice_area as f64 / (2 * pos as u64 * neg as u64) as f64;
    Ok((RocCurve { points }, auc))
}

pub fn evaluate(truth: &[usize], pred: &[usize], scores: &[f64]) -> Result<Metrics, TrainError> {
    let per_class_recall = per_class_recall(truth, pred)?;
    let (_, auc) = roc_auc(truth, scores)?;
    Ok(Metrics {
        uar: (per_class_recall[0] + per_class_recall[1]) / 2.0,
        auc,
        per_class_recall,
        confusion: confusion(truth, pred)?,
    })
}

/// Cross-model outcome for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaseLabel {
    /// Both models correct.
    O,
    /// Both wrong.
    X,
    /// Only the frozen model correct.
    A,
    /// Only the fine-tuned model correct.
    B,
}

impl CaseLabel {
    pub const ALL: [CaseLabel; 4] = [CaseLabel::O, CaseLabel::X, CaseLabel::A, CaseLabel::B];
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseLabel::O => "O",
            CaseLabel::X => "X",
            CaseLabel::A => "A",
            CaseLabel::B => "B",
        })
    }
}

pub fn case_label(pred_frozen: usize, pred_finetuned: usize, truth: usize) -> CaseLabel {
    match (pred_frozen == truth, pred_finetuned == truth) {
        (true, true) => CaseLabel::O,
        (false, false) => CaseLabel::X,
        (true, false) => CaseLabel::A,
        (false, true) => CaseLabel::B,
    }
}
