use serde::{Deserialize, Serialize};

use super::{check_lengths, EvalError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Confusion counts with a positive prediction iff `score > 0.5`.
pub fn confusion(scores: &[f64], labels: &[u8]) -> Result<ConfusionMatrix, EvalError> {
    confusion_at(scores, labels, 0.5)
}

pub fn confusion_at(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMatrix, EvalError> {
    check_lengths(scores, labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s > threshold, y == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub classification_error: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Undefined ratios (zero denominators) are reported as 0.
pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::Empty);
    }
    let accuracy = ratio(cm.tp + cm.tn, cm.total());
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ClassificationMetrics {
        accuracy,
        classification_error: 1.0 - accuracy,
        precision,
        recall,
        f1,
    })
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-15, 1 − 1e-15]`.
pub fn log_loss(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    check_lengths(scores, labels)?;
    let eps = 1e-15;
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let p = s.clamp(eps, 1.0 - eps);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    /// `None` unless `n > d + 1`.
    pub adjusted_r2: Option<f64>,
}

pub fn regression_metrics(predictions: &[f64], targets: &[f64], d: usize) -> Result<RegressionMetrics, EvalError> {
    if predictions.len() != targets.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), targets.len()));
    }
    let n = targets.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples { needed: 2, got: n });
    }
    let nf = n as f64;
    let mean = targets.iter().sum::<f64>() / nf;
    let sst: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    let sse: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum();
    let mae = predictions.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / nf;
    let r2 = 1.0 - sse / sst;
    let adjusted_r2 = (n > d + 1).then(|| 1.0 - (1.0 - r2) * (nf - 1.0) / (nf - d as f64 - 1.0));
    Ok(RegressionMetrics {
        rmse: (sse / nf).sqrt(),
        mae,
        r2,
        adjusted_r2,
    })
}
