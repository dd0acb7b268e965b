use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// Stds below this are treated as 1 so constant features pass through
/// centred but unscaled.
pub const MIN_STD: f64 = 1e-12;

/// Per-feature z-score statistics, fit on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Population mean and std of each column.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean: Vec<f64> = x.sum_axis(Axis(0)).iter().map(|s| s / n).collect();
        let std = x
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(col, m)| {
                let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                let s = var.sqrt();
                if s < MIN_STD || !s.is_finite() {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Normalizer { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn normalize_matrix(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_column_keeps_unit_std() {
        let x = Array2::from_shape_vec((3, 2), vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]).unwrap();
        let n = Normalizer::fit(x.view());
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert!((n.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(n.std[1], 1.0);
        let z = n.normalize_matrix(x.view());
        assert!(z.column(1).iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn normalize_round_trip(
            rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 4), 2..20),
            probe in proptest::collection::vec(-1e3f64..1e3, 4),
        ) {
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let x = Array2::from_shape_vec((rows.len(), 4), flat).unwrap();
            let n = Normalizer::fit(x.view());
            prop_assert!(n.std.iter().all(|&s| s > 0.0));
            let back = n.denormalize(&n.normalize(&probe));
            for (a, b) in back.iter().zip(&probe) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
