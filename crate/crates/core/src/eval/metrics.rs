use serde::{Deserialize, Serialize};

use super::EvalError;

/// Fraction of windows labelled ARDS.
pub fn patient_score(window_is_ards: &[bool]) -> Result<f64, EvalError> {
    if window_is_ards.is_empty() {
        return Err(EvalError::NoWindows);
    }
    let pos = window_is_ards.iter().filter(|&&b| b).count();
    Ok(pos as f64 / window_is_ards.len() as f64)
}

/// Majority rule: ARDS only when strictly more than half the windows are.
pub fn patient_is_ards(score: f64) -> bool {
    score > 0.5
}

/// Window rule: ARDS when the mean instance probability exceeds 0.5.
pub fn window_is_ards(probability: f64) -> bool {
    probability > 0.5
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve via the Mann-Whitney statistic.
pub fn roc_auc(scores: &[f64], is_ards: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != is_ards.len() {
        return Err(EvalError::InvalidConfig(format!(
            "{} scores for {} labels",
            scores.len(),
            is_ards.len()
        )));
    }
    let n_pos = is_ards.iter().filter(|&&b| b).count();
    let n_neg = is_ards.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let ranks = average_ranks(scores);
    let r_pos: f64 = ranks.iter().zip(is_ards).filter(|(_, &b)| b).map(|(r, _)| r).sum();
    let u = r_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Threshold metrics. PPV and NPV are NaN when nothing is predicted in their
/// class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    #[serde(with = "nan_as_null")]
    pub ppv: f64,
    #[serde(with = "nan_as_null")]
    pub npv: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion_metrics(predicted: &[bool], truth: &[bool]) -> Result<ConfusionMetrics, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::InvalidConfig(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    if tp + fn_ == 0 || tn + fp == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok(ConfusionMetrics {
        accuracy: ratio(tp + tn, truth.len()),
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        ppv: ratio(tp, tp + fp),
        npv: ratio(tn, tn + fn_),
    })
}

/// ROC vertices `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one per distinct
/// score taken as a threshold in decreasing order.
pub fn roc_curve(scores: &[f64], is_ards: &[bool]) -> Result<Vec<(f64, f64)>, EvalError> {
    let n_pos = is_ards.iter().filter(|&&b| b).count();
    let n_neg = is_ards.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if is_ards[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// Linear interpolation of a ROC curve's TPR at `fpr`; at a vertical step
/// the upper value is taken.
pub fn interpolate_tpr(curve: &[(f64, f64)], fpr: f64) -> f64 {
    let mut best = 0.0f64;
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if fpr >= x0 && fpr <= x1 {
            let y = if x1 == x0 {
                y1
            } else {
                y0 + (y1 - y0) * (fpr - x0) / (x1 - x0)
            };
            best = best.max(y);
        }
    }
    best
}

/// Serializes NaN as `null` and reads `null` back as NaN.
pub(crate) mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// [`nan_as_null`] for every element of a vector.
pub(crate) mod nan_as_null_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| (!x.is_nan()).then_some(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v = Vec::<Option<f64>>::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}
