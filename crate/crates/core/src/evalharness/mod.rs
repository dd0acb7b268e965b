//! K-fold cross-validation, metrics, reports and drop-column importance.
//!
//! Folds split frames, not subjects: every subject is in every training
//! split, so identity classification is well defined. Normalization and
//! BMI-class clustering are refit inside each training split.

mod cv;
mod folds;
pub mod metrics;
mod report;

use thiserror::Error;

use crate::baselines::{BaselineError, BmiClassMode};
use crate::mtnet::MtnetError;

pub use cv::{
    class_subjects, drop_column_importance, run_cv, run_cv_with_plan, ClassSpec, CvConfig, FeatureImportance, ImportanceReport,
    Recipe, IMPORTANCE_METRICS,
};
pub use folds::FoldPlan;
pub use metrics::{accuracy, confusion_matrix, mean_std, r2, rmse, ClassificationMetrics};
pub use report::{Aggregate, EvaluationReport, FoldReport};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("need at least 2 folds, got {0}")]
    BadFoldCount(usize),
    #[error("subject {subject} has {frames} frames, fewer than the {folds} folds")]
    TooFewFrames { subject: String, frames: usize, folds: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {pred} predictions for {truth} targets")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("R² is undefined for a constant target")]
    ConstantTruth,
    #[error("class {class} is outside 0..{n_classes}")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("unknown subject {0:?}")]
    UnknownSubject(String),
    #[error("BMI class mode {0:?} needs subject records (weight, height, age)")]
    NeedSubjects(BmiClassMode),
    #[error("{0}")]
    Recipe(String),
    #[error("folds {folds:?} failed; first error: {first}")]
    TooManyFailedFolds { folds: Vec<usize>, first: String },
}

impl From<BaselineError> for EvalError {
    fn from(e: BaselineError) -> Self {
        EvalError::Recipe(e.to_string())
    }
}

impl From<MtnetError> for EvalError {
    fn from(e: MtnetError) -> Self {
        EvalError::Recipe(e.to_string())
    }
}
