use std::f64::consts::PI;

use super::{check_rows, BaselineError};

/// Per-feature variances never drop below this.
pub const VARIANCE_FLOOR: f64 = 1e-9;

/// Gaussian naive Bayes with maximum-likelihood class statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    log_prior: Vec<f64>,
    mean: Vec<Vec<f64>>,
    var: Vec<Vec<f64>>,
}

impl GaussianNb {
    /// Every class in `0..n_classes` needs at least one sample.
    pub fn fit(x: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<Self, BaselineError> {
        let d = check_rows(x)?;
        if labels.len() != x.len() {
            return Err(BaselineError::DimensionMismatch {
                expected: x.len(),
                found: labels.len(),
            });
        }
        let mut count = vec![0usize; n_classes];
        let mut mean = vec![vec![0.0; d]; n_classes];
        for (row, &c) in x.iter().zip(labels) {
            if c >= n_classes {
                return Err(BaselineError::EmptyClass(c));
            }
            count[c] += 1;
            mean[c].iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        if let Some(c) = count.iter().position(|&n| n == 0) {
            return Err(BaselineError::EmptyClass(c));
        }
        for (m, &n) in mean.iter_mut().zip(&count) {
            m.iter_mut().for_each(|v| *v /= n as f64);
        }
        let mut var = vec![vec![0.0; d]; n_classes];
        for (row, &c) in x.iter().zip(labels) {
            for ((s, v), m) in var[c].iter_mut().zip(row).zip(&mean[c]) {
                *s += (v - m) * (v - m);
            }
        }
        for (s, &n) in var.iter_mut().zip(&count) {
            s.iter_mut().for_each(|v| *v = (*v / n as f64).max(VARIANCE_FLOOR));
        }
        let total = x.len() as f64;
        Ok(GaussianNb {
            log_prior: count.iter().map(|&n| (n as f64 / total).ln()).collect(),
            mean,
            var,
        })
    }

    /// Unnormalized log posterior of each class.
    pub fn log_scores(&self, q: &[f64]) -> Vec<f64> {
        self.log_prior
            .iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(lp, (m, v))| {
                lp + q
                    .iter()
                    .zip(m.iter().zip(v))
                    .map(|(x, (m, v))| -0.5 * (2.0 * PI * v).ln() - (x - m) * (x - m) / (2.0 * v))
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn classify(&self, q: &[f64]) -> Result<usize, BaselineError> {
        let d = self.mean[0].len();
        if q.len() != d {
            return Err(BaselineError::DimensionMismatch {
                expected: d,
                found: q.len(),
            });
        }
        Ok(super::argmax(self.log_scores(q)))
    }

    pub fn predict(&self, queries: &[Vec<f64>]) -> Result<Vec<usize>, BaselineError> {
        queries.iter().map(|q| self.classify(q)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_classes() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![if i < 10 { i as f64 * 0.1 } else { 100.0 + i as f64 * 0.1 }]).collect();
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let nb = GaussianNb::fit(&x, &y, 2).unwrap();
        assert_eq!(nb.predict(&x).unwrap(), y);
    }

    #[test]
    fn prior_decides_identical_likelihoods() {
        // Class 1 has 6 samples, class 0 has 4, both split evenly over {0, 1}.
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![(i % 2) as f64]).collect();
        let y = vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let nb = GaussianNb::fit(&x, &y, 2).unwrap();
        for q in [-1.0, 0.0, 0.5, 1.0, 3.0] {
            assert_eq!(nb.classify(&[q]).unwrap(), 1);
        }
    }

    #[test]
    fn variance_floor_keeps_scores_finite() {
        let x = vec![vec![1.0], vec![1.0], vec![5.0], vec![6.0]];
        let nb = GaussianNb::fit(&x, &[0, 0, 1, 1], 2).unwrap();
        assert!(nb.log_scores(&[1.0]).iter().all(|s| s.is_finite()));
        assert!(nb.log_scores(&[2.0]).iter().all(|s| s.is_finite()));
        assert_eq!(nb.classify(&[1.0]).unwrap(), 0);
    }

    #[test]
    fn empty_class_is_an_error() {
        assert_eq!(
            GaussianNb::fit(&[vec![0.0]], &[0], 2).unwrap_err(),
            BaselineError::EmptyClass(1)
        );
    }
}
