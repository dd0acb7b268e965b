//! The multitask network as a pure function of a flat parameter vector θ.
//!
//! Layout of θ, layer by layer: the weight matrix (fan_in × fan_out,
//! row-major) followed by the bias vector. Hidden layers come first, then
//! the identity head, then the one-output BMI head.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{activation, MtnetError};
use crate::exec::{self, Execution};

/// Hidden widths of the published architecture.
pub const PAPER_HIDDEN: [usize; 5] = [64, 128, 256, 256, 256];

/// Floor applied to the target probability inside the log.
pub const PROB_EPS: f64 = 1e-12;

/// Rows per forward/backward work item. Fixed so the reduction order does
/// not depend on the thread count.
pub const CHUNK_ROWS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub n_subjects: usize,
}

/// Position of one dense layer inside θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w_offset: usize,
    pub b_offset: usize,
}

impl LayerShape {
    fn end(&self) -> usize {
        self.b_offset + self.fan_out
    }
}

impl Architecture {
    pub fn paper(input_dim: usize, n_subjects: usize) -> Self {
        Architecture {
            input_dim,
            hidden: PAPER_HIDDEN.to_vec(),
            n_subjects,
        }
    }

    pub fn validate(&self) -> Result<(), MtnetError> {
        if self.input_dim == 0 || self.n_subjects == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(MtnetError::InvalidConfig(format!(
                "architecture {}→{:?}→({}, 1) has an empty layer",
                self.input_dim, self.hidden, self.n_subjects
            )));
        }
        Ok(())
    }

    /// Hidden layers, then the identity head, then the BMI head.
    pub fn layers(&self) -> Vec<LayerShape> {
        let mut out = Vec::with_capacity(self.hidden.len() + 2);
        let mut offset = 0;
        let mut push = |fan_in: usize, fan_out: usize| {
            let l = LayerShape {
                fan_in,
                fan_out,
                w_offset: offset,
                b_offset: offset + fan_in * fan_out,
            };
            offset = l.end();
            out.push(l);
        };
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            push(prev, h);
            prev = h;
        }
        push(prev, self.n_subjects);
        push(prev, 1);
        out
    }

    pub fn n_params(&self) -> usize {
        self.layers().last().map(|l| l.end()).unwrap_or(0)
    }

    pub fn last_hidden(&self) -> usize {
        *self.hidden.last().expect("validated architecture")
    }
}

fn weights<'a>(theta: &'a [f64], l: &LayerShape) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((l.fan_in, l.fan_out), &theta[l.w_offset..l.b_offset]).expect("layout")
}

fn bias<'a>(theta: &'a [f64], l: &LayerShape) -> ArrayView1<'a, f64> {
    ArrayView1::from(&theta[l.b_offset..l.end()])
}

/// Splits a gradient buffer into the (weight, bias) views of one layer.
fn grad_views<'a>(grad: &'a mut [f64], l: &LayerShape) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
    let (w, b) = grad[l.w_offset..l.end()].split_at_mut(l.fan_in * l.fan_out);
    (
        ArrayViewMut2::from_shape((l.fan_in, l.fan_out), w).expect("layout"),
        ArrayViewMut1::from(b),
    )
}

/// x·W + b.
fn affine(x: &ArrayView2<f64>, theta: &[f64], l: &LayerShape) -> Array2<f64> {
    let mut z = Array2::zeros((x.nrows(), l.fan_out));
    z.assign(&bias(theta, l).broadcast((x.nrows(), l.fan_out)).expect("bias broadcast"));
    general_mat_mul(1.0, x, &weights(theta, l), 1.0, &mut z);
    z
}

/// Row-wise softmax, shifted by the row max.
pub fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Post-tanh activations of every hidden layer for a batch.
fn hidden_forward(arch: &Architecture, layers: &[LayerShape], theta: &[f64], x: ArrayView2<f64>) -> Vec<Array2<f64>> {
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(arch.hidden.len());
    for (i, l) in layers[..arch.hidden.len()].iter().enumerate() {
        let mut z = {
            let input = if i == 0 { x.view() } else { acts[i - 1].view() };
            affine(&input, theta, l)
        };
        activation::tanh_in_place(z.as_slice_mut().expect("standard layout"));
        acts.push(z);
    }
    acts
}

/// Per-sample identity probabilities and BMI estimates for normalized
/// inputs `x` (one row per sample).
pub fn forward(arch: &Architecture, theta: &[f64], x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let layers = arch.layers();
    let h = arch.hidden.len();
    let acts = hidden_forward(arch, &layers, theta, x);
    let top = acts[h - 1].view();
    let mut probs = affine(&top, theta, &layers[h]);
    softmax_rows(&mut probs);
    let bmi = affine(&top, theta, &layers[h + 1]).column(0).to_owned();
    (probs, bmi)
}

/// Fifth-layer (last hidden) activations for normalized inputs.
pub fn last_hidden(arch: &Architecture, theta: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
    let layers = arch.layers();
    hidden_forward(arch, &layers, theta, x).pop().expect("at least one hidden layer")
}

/// Normalized inputs with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Array2<f64>,
    pub identity: Vec<usize>,
    pub bmi: Vec<f64>,
}

impl Batch {
    pub fn new(x: Array2<f64>, identity: Vec<usize>, bmi: Vec<f64>) -> Result<Self, MtnetError> {
        let n = x.nrows();
        if n == 0 {
            return Err(MtnetError::EmptyBatch);
        }
        if identity.len() != n || bmi.len() != n {
            return Err(MtnetError::DimensionMismatch {
                expected: n,
                found: identity.len().min(bmi.len()),
            });
        }
        Ok(Batch { x, identity, bmi })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Un-normalized loss sum over one chunk, gradient sum written into `grad`
/// (which must be zeroed and of length n_params).
fn chunk_loss_grad(
    arch: &Architecture,
    layers: &[LayerShape],
    theta: &[f64],
    x: ArrayView2<f64>,
    identity: &[usize],
    bmi: &[f64],
    grad: &mut [f64],
) -> f64 {
    let h = arch.hidden.len();
    let acts = hidden_forward(arch, layers, theta, x);
    let top = acts[h - 1].view();
    let (id_layer, bmi_layer) = (&layers[h], &layers[h + 1]);

    let mut dlogits = affine(&top, theta, id_layer);
    softmax_rows(&mut dlogits);
    let yhat = affine(&top, theta, bmi_layer);
    let mut dbmi = Array2::zeros((x.nrows(), 1));
    let mut loss = 0.0;
    for (i, (&y, &b)) in identity.iter().zip(bmi).enumerate() {
        let p = dlogits[[i, y]];
        if p < PROB_EPS {
            // Loss is flat in the clamped region.
            loss -= PROB_EPS.ln();
            dlogits.row_mut(i).fill(0.0);
        } else {
            loss -= p.ln();
            dlogits[[i, y]] -= 1.0;
        }
        let r = yhat[[i, 0]] - b;
        loss += 0.5 * r * r;
        dbmi[[i, 0]] = r;
    }

    // Heads.
    let mut dtop = Array2::zeros((x.nrows(), top.ncols()));
    for (layer, delta) in [(id_layer, &dlogits), (bmi_layer, &dbmi)] {
        let (mut gw, mut gb) = grad_views(grad, layer);
        general_mat_mul(1.0, &top.t(), delta, 0.0, &mut gw);
        gb.assign(&delta.sum_axis(Axis(0)));
        general_mat_mul(1.0, delta, &weights(theta, layer).t(), 1.0, &mut dtop);
    }

    // Hidden layers, top down.
    let mut dh = dtop;
    for l in (0..h).rev() {
        let a = &acts[l];
        dh.zip_mut_with(a, |d, &a| *d *= 1.0 - a * a);
        let input = if l == 0 { x.view() } else { acts[l - 1].view() };
        let (mut gw, mut gb) = grad_views(grad, &layers[l]);
        general_mat_mul(1.0, &input.t(), &dh, 0.0, &mut gw);
        gb.assign(&dh.sum_axis(Axis(0)));
        if l > 0 {
            let mut prev = Array2::zeros((x.nrows(), layers[l].fan_in));
            general_mat_mul(1.0, &dh, &weights(theta, &layers[l]).t(), 0.0, &mut prev);
            dh = prev;
        }
    }
    loss
}

/// Mean multitask loss over the batch plus λ·Σ W² (biases excluded), and
/// its exact gradient written into `grad`.
pub fn loss_and_grad(
    arch: &Architecture,
    theta: &[f64],
    batch: &Batch,
    weight_decay: f64,
    exec: Execution,
    grad: &mut [f64],
) -> f64 {
    let layers = arch.layers();
    let p = arch.n_params();
    assert_eq!(theta.len(), p, "θ has the wrong length");
    assert_eq!(grad.len(), p, "gradient buffer has the wrong length");
    let n = batch.len();
    let chunks = n.div_ceil(CHUNK_ROWS);
    let parts = exec::map_range(exec, chunks, |c| {
        let lo = c * CHUNK_ROWS;
        let hi = (lo + CHUNK_ROWS).min(n);
        let mut g = vec![0.0; p];
        let loss = chunk_loss_grad(
            arch,
            &layers,
            theta,
            batch.x.slice(ndarray::s![lo..hi, ..]),
            &batch.identity[lo..hi],
            &batch.bmi[lo..hi],
            &mut g,
        );
        (loss, g)
    });
    grad.fill(0.0);
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / n as f64;
    loss *= inv;
    grad.iter_mut().for_each(|g| *g *= inv);
    loss + decay(&layers, theta, weight_decay, grad)
}

/// Adds the decay gradient 2λW into `grad` and returns λ·Σ W².
fn decay(layers: &[LayerShape], theta: &[f64], weight_decay: f64, grad: &mut [f64]) -> f64 {
    if weight_decay == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for l in layers {
        for i in l.w_offset..l.b_offset {
            sum += theta[i] * theta[i];
            grad[i] += 2.0 * weight_decay * theta[i];
        }
    }
    weight_decay * sum
}

/// Sum of squared weights (biases excluded).
pub fn weight_norm_sq(arch: &Architecture, theta: &[f64]) -> f64 {
    arch.layers()
        .iter()
        .flat_map(|l| &theta[l.w_offset..l.b_offset])
        .map(|w| w * w)
        .sum()
}

/// Glorot-uniform weights, zero biases.
pub fn init_params<R: Rng>(arch: &Architecture, rng: &mut R) -> Vec<f64> {
    let mut theta = vec![0.0; arch.n_params()];
    for l in arch.layers() {
        let bound = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
        for w in &mut theta[l.w_offset..l.b_offset] {
            *w = rng.random_range(-bound..=bound);
        }
    }
    theta
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Architecture {
        Architecture {
            input_dim: 3,
            hidden: vec![4, 5],
            n_subjects: 3,
        }
    }

    #[test]
    fn paper_layout() {
        let arch = Architecture::paper(14, 13);
        let shapes: Vec<_> = arch.layers().iter().map(|l| (l.fan_in, l.fan_out)).collect();
        assert_eq!(
            shapes,
            vec![(14, 64), (64, 128), (128, 256), (256, 256), (256, 256), (256, 13), (256, 1)]
        );
        let expected: usize = shapes.iter().map(|(i, o)| i * o + o).sum();
        assert_eq!(arch.n_params(), expected);
    }

    #[test]
    fn zero_network_is_uniform() {
        let arch = Architecture::paper(14, 13);
        let theta = vec![0.0; arch.n_params()];
        let x = Array2::from_elem((2, 14), 0.7);
        let (p, b) = forward(&arch, &theta, x.view());
        for v in p.iter() {
            assert!((v - 1.0 / 13.0).abs() < 1e-15);
        }
        assert_eq!(b.to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut a = Array2::from_shape_vec((1, 4), vec![0.3, -1.0, 2.0, 0.1]).unwrap();
        let mut b = a.mapv(|v| v + 123.0);
        softmax_rows(&mut a);
        softmax_rows(&mut b);
        assert!((a.sum() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn decay_only_gradient_at_zero_loss() {
        // One-hidden-unit net whose heads are exactly right: the gradient is
        // pure decay, 2λW on weights and 0 on biases.
        let arch = Architecture {
            input_dim: 1,
            hidden: vec![1],
            n_subjects: 1,
        };
        let layers = arch.layers();
        let mut theta = vec![0.0; arch.n_params()];
        theta[layers[0].w_offset] = 0.5;
        // BMI head: weight 0, bias = target.
        theta[layers[2].b_offset] = 21.0;
        let batch = Batch::new(Array2::from_elem((3, 1), 1.0), vec![0; 3], vec![21.0; 3]).unwrap();
        let mut g = vec![0.0; arch.n_params()];
        let lam = 1e-4;
        let loss = loss_and_grad(&arch, &theta, &batch, lam, Execution::Sequential, &mut g);
        assert!((loss - lam * 0.25).abs() < 1e-15);
        for (i, gi) in g.iter().enumerate() {
            let expected = if layers.iter().any(|l| (l.w_offset..l.b_offset).contains(&i)) {
                2.0 * lam * theta[i]
            } else {
                0.0
            };
            assert!((gi - expected).abs() < 1e-15, "coordinate {i}: {gi} vs {expected}");
        }
    }

    #[test]
    fn unit_weight_penalty() {
        let arch = small();
        let theta = vec![1.0; arch.n_params()];
        let n_weights: usize = arch.layers().iter().map(|l| l.fan_in * l.fan_out).sum();
        assert_eq!(weight_norm_sq(&arch, &theta), n_weights as f64);
        let batch = Batch::new(Array2::zeros((1, 3)), vec![0], vec![0.0]).unwrap();
        let mut g = vec![0.0; arch.n_params()];
        let with = loss_and_grad(&arch, &theta, &batch, 1e-4, Execution::Sequential, &mut g);
        let without = loss_and_grad(&arch, &theta, &batch, 0.0, Execution::Sequential, &mut g);
        assert!((with - without - 1e-4 * n_weights as f64).abs() < 1e-12);
    }

    #[test]
    fn init_is_bounded_with_zero_biases() {
        let arch = Architecture::paper(14, 5);
        let theta = init_params(&arch, &mut ChaCha8Rng::seed_from_u64(1));
        for l in arch.layers() {
            let bound = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            assert!(theta[l.w_offset..l.b_offset].iter().all(|w| w.abs() <= bound));
            assert!(theta[l.b_offset..l.b_offset + l.fan_out].iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn chunking_and_strategy_do_not_change_bits() {
        let arch = small();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta = init_params(&arch, &mut rng);
        let n = 3 * CHUNK_ROWS + 7;
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-2.0..2.0));
        let ids = (0..n).map(|i| i % 3).collect();
        let bmi = (0..n).map(|i| 20.0 + (i % 7) as f64).collect();
        let batch = Batch::new(x, ids, bmi).unwrap();
        let mut g1 = vec![0.0; arch.n_params()];
        let mut g2 = vec![0.0; arch.n_params()];
        let a = loss_and_grad(&arch, &theta, &batch, 1e-4, Execution::Sequential, &mut g1);
        let b = loss_and_grad(&arch, &theta, &batch, 1e-4, Execution::Parallel, &mut g2);
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(g1.iter().zip(&g2).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
