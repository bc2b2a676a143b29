//! Splitting, metrics, ROC/AUC and multi-model comparison reports.

use thiserror::Error;

use crate::learn::LearnError;

pub mod metrics;
pub mod report;
pub mod roc;
pub mod split;

pub use metrics::{
    classification_metrics, confusion, confusion_at, log_loss, regression_metrics, ClassificationMetrics,
    ConfusionMatrix, RegressionMetrics,
};
pub use report::{
    compare_models, evaluate_model, write_report_csv, write_report_json, write_roc_csv, EvaluationReport, Metrics,
    ModelReport,
};
pub use roc::{auc, mann_whitney, roc_curve};
pub use split::{stratified_split, stratified_split_indices, SplitDescriptor};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} scores but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("invalid split: {0}")]
    Split(String),
    #[error("targets have zero variance; R² is undefined")]
    ZeroVariance,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("no families requested")]
    NoFamilies,
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}
