//! Classical comparison models: k-nearest neighbours, Gaussian naive Bayes,
//! least-squares regression, and k-means for building BMI classes.

mod classes;
mod gnb;
mod kmeans;
mod knn;
mod linreg;

use thiserror::Error;

pub use classes::{build_bmi_classes, BmiClassMode, BmiClasses, BMI_CLASS_COUNT};
pub use gnb::{GaussianNb, VARIANCE_FLOOR};
pub use kmeans::{kmeans, KMeansConfig, KMeansResult};
pub use knn::{Knn, Metric};
pub use linreg::LinearRegression;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("k = {k} must be in 1..={n}")]
    BadK { k: usize, n: usize },
    #[error("empty training set")]
    Empty,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,
    #[error("class {0} has no training samples")]
    EmptyClass(usize),
    #[error("too few samples: {n} for {needed} parameters")]
    TooFewSamples { n: usize, needed: usize },
    #[error("missing ages for subjects: {}", .0.join(", "))]
    MissingAge(Vec<String>),
    #[error("insufficient diversity: only {non_empty} of {k} BMI classes are non-empty")]
    InsufficientDiversity { non_empty: usize, k: usize },
    #[error("unknown {what} {value:?}")]
    Unknown { what: &'static str, value: String },
}

/// Index of the largest value; ties go to the smaller index.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    values
        .into_iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
        .0
}

pub(crate) fn check_rows(x: &[Vec<f64>]) -> Result<usize, BaselineError> {
    let d = x.first().ok_or(BaselineError::Empty)?.len();
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(BaselineError::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    Ok(d)
}
