//! Multinomial logistic regression on last-hidden-layer activations, used
//! to read BMI classes off a trained network.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::network::{softmax_rows, PROB_EPS};
use super::optim::{minimize_lbfgs, LbfgsConfig, Objective, OptimTrace};
use super::MtnetError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticHead {
    pub dim: usize,
    pub n_classes: usize,
    /// dim × n_classes, row-major, followed by n_classes biases.
    pub params: Vec<f64>,
}

struct HeadObjective<'a> {
    x: ArrayView2<'a, f64>,
    labels: &'a [usize],
    n_classes: usize,
    weight_decay: f64,
}

impl Objective for HeadObjective<'_> {
    fn dim(&self) -> usize {
        (self.x.ncols() + 1) * self.n_classes
    }

    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (d, k) = (self.x.ncols(), self.n_classes);
        let n = self.x.nrows() as f64;
        let (w, b) = theta.split_at(d * k);
        let w = ArrayView2::from_shape((d, k), w).expect("layout");
        let mut p = Array2::zeros((self.x.nrows(), k));
        p.assign(&ArrayView1::from(b).broadcast((self.x.nrows(), k)).expect("broadcast"));
        general_mat_mul(1.0, &self.x, &w, 1.0, &mut p);
        softmax_rows(&mut p);
        let mut loss = 0.0;
        for (i, &y) in self.labels.iter().enumerate() {
            let py = p[[i, y]];
            if py < PROB_EPS {
                loss -= PROB_EPS.ln();
                p.row_mut(i).fill(0.0);
            } else {
                loss -= py.ln();
                p[[i, y]] -= 1.0;
            }
        }
        let (gw, gb) = grad.split_at_mut(d * k);
        let mut gw = ndarray::ArrayViewMut2::from_shape((d, k), gw).expect("layout");
        general_mat_mul(1.0 / n, &self.x.t(), &p, 0.0, &mut gw);
        for (g, s) in gb.iter_mut().zip(p.sum_axis(Axis(0))) {
            *g = s / n;
        }
        let mut penalty = 0.0;
        for (g, &wv) in gw.iter_mut().zip(w.iter()) {
            penalty += wv * wv;
            *g += 2.0 * self.weight_decay * wv;
        }
        loss / n + self.weight_decay * penalty
    }
}

impl LogisticHead {
    /// Fits by L-BFGS from zero until the gradient norm drops below
    /// `grad_tol` (or `max_iterations`). Every class in `0..n_classes` must
    /// be present.
    pub fn fit(
        x: ArrayView2<f64>,
        labels: &[usize],
        n_classes: usize,
        weight_decay: f64,
        grad_tol: f64,
        max_iterations: usize,
    ) -> Result<(Self, OptimTrace), MtnetError> {
        if x.nrows() == 0 {
            return Err(MtnetError::EmptyBatch);
        }
        if labels.len() != x.nrows() {
            return Err(MtnetError::DimensionMismatch {
                expected: x.nrows(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(MtnetError::LabelOutOfRange { label: bad, n_classes });
        }
        let mut seen = vec![false; n_classes];
        labels.iter().for_each(|&l| seen[l] = true);
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(MtnetError::MissingClass(missing));
        }
        let obj = HeadObjective {
            x,
            labels,
            n_classes,
            weight_decay,
        };
        let cfg = LbfgsConfig {
            max_iterations,
            grad_tol,
            // Run to the gradient criterion rather than stalling early.
            rel_loss_tol: f64::MIN_POSITIVE,
            ..LbfgsConfig::default()
        };
        let (params, trace) = minimize_lbfgs(&obj, &vec![0.0; obj.dim()], &cfg);
        if params.iter().any(|v| !v.is_finite()) {
            return Err(MtnetError::NonFinite);
        }
        Ok((
            LogisticHead {
                dim: x.ncols(),
                n_classes,
                params,
            },
            trace,
        ))
    }

    pub fn probabilities(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let (d, k) = (self.dim, self.n_classes);
        let (w, b) = self.params.split_at(d * k);
        let mut p = Array2::zeros((x.nrows(), k));
        p.assign(&ArrayView1::from(b).broadcast((x.nrows(), k)).expect("broadcast"));
        general_mat_mul(1.0, &x, &ArrayView2::from_shape((d, k), w).expect("layout"), 1.0, &mut p);
        softmax_rows(&mut p);
        p
    }

    /// Arg-max class per row; ties go to the smaller class id.
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        self.probabilities(x)
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect()
    }
}
