//! Confusion-matrix rates, ROC curves and AUC, with a Mann-Whitney
//! concordance route that must agree with the trapezoid area.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("rate undefined: denominator is zero")]
    UndefinedRate,
    #[error("both classes must be present")]
    SingleClass,
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub threshold: f64,
}

/// (FPR, TPR) points from (0,0) to (1,1) with the thresholds that produced
/// the interior points.
#[derive(Debug, Clone)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
}

/// Predicted positive iff score >= t.
pub fn confusion_at_threshold(scores: &[f64], labels: &[u8], t: f64) -> ConfusionMatrix {
    assert_eq!(scores.len(), labels.len());
    let mut cm = ConfusionMatrix {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
        threshold: t,
    };
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= t, y == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    cm
}

/// TP / (TP + FN).
pub fn tpr(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let denom = cm.tp + cm.fn_;
    if denom == 0 {
        return Err(MetricsError::UndefinedRate);
    }
    Ok(cm.tp as f64 / denom as f64)
}

/// TN / (TN + FP).
pub fn tnr(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let denom = cm.tn + cm.fp;
    if denom == 0 {
        return Err(MetricsError::UndefinedRate);
    }
    Ok(cm.tn as f64 / denom as f64)
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    (pos, labels.len() - pos)
}

/// ROC points at thresholds = unique scores descending; tied scores flip
/// together. Sentinel endpoints (0,0) and (1,1) are always present.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        // Consume the whole tie group at this threshold.
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(t);
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    debug_assert_eq!(*points.last().unwrap(), (1.0, 1.0));
    Ok(RocCurve { points, thresholds })
}

/// Trapezoidal area under the ROC curve.
pub fn auc_trapezoid(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Mann-Whitney concordance: (#{pos > neg} + 0.5 * #{pos = neg}) /
/// (#pos * #neg).
pub fn auc_concordance(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    // Rank-based O(n log n) count of concordant pairs with tie handling.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut concordant = 0.0;
    let mut neg_below = 0usize; // negatives with strictly smaller score
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let mut tie_pos = 0usize;
        let mut tie_neg = 0usize;
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tie_pos += 1;
            } else {
                tie_neg += 1;
            }
            i += 1;
        }
        concordant += tie_pos as f64 * (neg_below as f64 + 0.5 * tie_neg as f64);
        neg_below += tie_neg;
    }
    Ok(concordant / (pos as f64 * neg as f64))
}
