use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{check_rows, BaselineError};
use crate::exec::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    /// 1 − cos(a, b).
    Cosine,
    /// (Σ|aᵢ − bᵢ|³)^⅓.
    Minkowski3,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> Result<f64, BaselineError> {
        Ok(match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Minkowski3 => a.iter().zip(b).map(|(x, y)| (x - y).abs().powi(3)).sum::<f64>().cbrt(),
            Metric::Cosine => {
                let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    return Err(BaselineError::ZeroVector);
                }
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                1.0 - dot / (na * nb)
            }
        })
    }
}

impl FromStr for Metric {
    type Err = BaselineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            "minkowski3" | "cubic" => Ok(Metric::Minkowski3),
            other => Err(BaselineError::Unknown {
                what: "metric",
                value: other.into(),
            }),
        }
    }
}

/// Majority vote among the k nearest training points. Distance ties go to
/// the earlier training point, vote ties to the smaller class id.
#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    k: usize,
    metric: Metric,
    x: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl Knn {
    pub const DEFAULT_K: usize = 10;

    pub fn fit(x: Vec<Vec<f64>>, labels: Vec<usize>, k: usize, metric: Metric) -> Result<Self, BaselineError> {
        check_rows(&x)?;
        if labels.len() != x.len() {
            return Err(BaselineError::DimensionMismatch {
                expected: x.len(),
                found: labels.len(),
            });
        }
        if k == 0 || k > x.len() {
            return Err(BaselineError::BadK { k, n: x.len() });
        }
        Ok(Knn { k, metric, x, labels })
    }

    pub fn classify(&self, query: &[f64]) -> Result<usize, BaselineError> {
        let d = self.x[0].len();
        if query.len() != d {
            return Err(BaselineError::DimensionMismatch {
                expected: d,
                found: query.len(),
            });
        }
        let mut dist = self
            .x
            .iter()
            .enumerate()
            .map(|(i, row)| Ok((self.metric.distance(row, query)?, i)))
            .collect::<Result<Vec<_>, BaselineError>>()?;
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let n_classes = self.labels.iter().max().map_or(0, |m| m + 1);
        let mut votes = vec![0usize; n_classes];
        for &(_, i) in &dist[..self.k] {
            votes[self.labels[i]] += 1;
        }
        Ok(super::argmax(votes.into_iter().map(|v| v as f64)))
    }

    pub fn predict(&self, queries: &[Vec<f64>], exec: Execution) -> Result<Vec<usize>, BaselineError> {
        exec::map(exec, queries, |q| self.classify(q)).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearer_point_wins() {
        let knn = Knn::fit(vec![vec![0.0], vec![10.0]], vec![0, 1], 1, Metric::Euclidean).unwrap();
        assert_eq!(knn.classify(&[4.0]).unwrap(), 0);
        assert_eq!(knn.classify(&[10.0]).unwrap(), 1);
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let a = [1.0, 2.0, 3.0];
        let b = [2.0, 4.0, 6.0];
        assert!(Metric::Cosine.distance(&a, &b).unwrap().abs() < 1e-15);
        assert_eq!(Metric::Cosine.distance(&a, &[0.0; 3]), Err(BaselineError::ZeroVector));
    }

    #[test]
    fn minkowski3_by_hand() {
        // |1|³ + |2|³ = 9.
        let d = Metric::Minkowski3.distance(&[0.0, 0.0], &[1.0, -2.0]).unwrap();
        assert!((d - 9f64.cbrt()).abs() < 1e-15);
    }

    #[test]
    fn ties_are_deterministic() {
        // Equidistant points: the earlier one is nearer.
        let knn = Knn::fit(vec![vec![-1.0], vec![1.0]], vec![3, 1], 1, Metric::Euclidean).unwrap();
        assert_eq!(knn.classify(&[0.0]).unwrap(), 3);
        // Two votes each: smallest class wins.
        let knn = Knn::fit(
            vec![vec![0.0], vec![0.1], vec![0.2], vec![0.3]],
            vec![2, 1, 2, 1],
            4,
            Metric::Euclidean,
        )
        .unwrap();
        assert_eq!(knn.classify(&[0.0]).unwrap(), 1);
    }

    #[test]
    fn bad_k() {
        assert_eq!(
            Knn::fit(vec![vec![0.0]], vec![0], 2, Metric::Euclidean).unwrap_err(),
            BaselineError::BadK { k: 2, n: 1 }
        );
    }

    #[test]
    fn one_nn_memorizes_training_set() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
        let y: Vec<usize> = (0..30).map(|i| i % 4).collect();
        for metric in [Metric::Euclidean, Metric::Minkowski3] {
            let knn = Knn::fit(x.clone(), y.clone(), 1, metric).unwrap();
            assert_eq!(knn.predict(&x, Execution::default()).unwrap(), y);
        }
    }
}
