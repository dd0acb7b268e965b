use nalgebra::{DMatrix, DVector};

use super::{check_rows, BaselineError};

/// Ordinary least squares with an intercept, solved through the SVD so that
/// rank-deficient designs get the minimum-norm solution.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegression {
    /// One weight per feature.
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearRegression {
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self, BaselineError> {
        let d = check_rows(x)?;
        if y.len() != x.len() {
            return Err(BaselineError::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        let n = x.len();
        if n < d + 1 {
            return Err(BaselineError::TooFewSamples { n, needed: d + 1 });
        }
        let a = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[i][j] } else { 1.0 });
        let b = DVector::from_column_slice(y);
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let eps = smax * (n.max(d + 1) as f64) * f64::EPSILON;
        let beta = svd.solve(&b, eps).expect("U and Vᵀ were computed");
        Ok(LinearRegression {
            weights: beta.as_slice()[..d].to_vec(),
            intercept: beta[d],
        })
    }

    pub fn predict_one(&self, q: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(q).map(|(w, x)| w * x).sum::<f64>()
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().map(|q| self.predict_one(q)).collect()
    }
}
