//! Multitask network: shared tanh trunk, softmax identity head and linear
//! BMI head, trained full-batch on the sum of both losses plus weight decay.
//!
//! The network itself ([`network`]) is a pure function of a flat θ; the
//! [`MultitaskModel`] wraps θ with the feature mask, the z-score statistics
//! of its training split and the subject ids that index the identity head.

mod activation;
pub mod head;
pub mod network;
pub mod normalize;
pub mod optim;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::GridSpec;
use crate::exec::Execution;
use crate::features::{FeatureMask, FeatureRow, FeatureVector};

pub use head::LogisticHead;
pub use network::{Architecture, Batch, PAPER_HIDDEN, PROB_EPS};
pub use normalize::Normalizer;
pub use optim::{AdamConfig, LbfgsConfig, Objective, OptimTrace, StopReason};

/// Number of BMI classes read off the last hidden layer.
pub const BMI_CLASSES: usize = 5;

const MODEL_FORMAT: &str = "smartbed-mtnet";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MtnetError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("feature mask mismatch: model was trained on {expected}, input has {found}")]
    MaskMismatch { expected: String, found: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown subject {0:?}")]
    UnknownSubject(String),
    #[error("label {label} is outside 0..{n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("BMI class {0} has no training samples")]
    MissingClass(usize),
    #[error("model has no BMI-class head")]
    NoClassHead,
    #[error("training produced non-finite parameters")]
    NonFinite,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

fn mask_string(m: &FeatureMask) -> String {
    m.bits().iter().map(|&b| if b { '1' } else { '0' }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Lbfgs,
    /// Full-batch Adam.
    FirstOrderAdaptive,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lbfgs" => Ok(OptimizerKind::Lbfgs),
            "adaptive" | "first_order_adaptive" | "adam" => Ok(OptimizerKind::FirstOrderAdaptive),
            other => Err(format!("unknown optimizer {other:?} (expected lbfgs or adaptive)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// One iteration is one full-batch optimizer step.
    pub max_iterations: usize,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub lbfgs_memory: usize,
    pub grad_tol: f64,
    pub rel_loss_tol: f64,
    /// Step size for the adaptive optimizer; unused by L-BFGS.
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iterations: 14_500,
            weight_decay: 1e-4,
            optimizer: OptimizerKind::Lbfgs,
            lbfgs_memory: 10,
            grad_tol: 1e-6,
            rel_loss_tol: 1e-10,
            learning_rate: 1e-3,
            hidden: PAPER_HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        TrainConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), MtnetError> {
        let bad = |m: &str| Err(MtnetError::InvalidConfig(m.to_string()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be a non-negative number");
        }
        if self.lbfgs_memory == 0 {
            return bad("lbfgs_memory must be positive");
        }
        if !(self.grad_tol > 0.0 && self.rel_loss_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty");
        }
        Ok(())
    }
}

/// Output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskOutput {
    pub identity_probs: Vec<f64>,
    pub bmi_estimate: f64,
}

impl MultitaskOutput {
    /// Most probable identity index; ties go to the smaller index.
    pub fn identity(&self) -> usize {
        argmax(self.identity_probs.iter().copied())
    }
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    values
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Raw (un-normalized) model inputs with identity and BMI labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub mask: FeatureMask,
    pub inputs: Array2<f64>,
    pub identity: Vec<usize>,
    pub bmi: Vec<f64>,
    /// Identity index → subject id.
    pub subject_ids: Vec<String>,
}

impl TrainingSet {
    /// Builds the set from feature rows; identity indices follow the order
    /// of `subject_ids`.
    pub fn from_rows<'a, I>(rows: I, mask: FeatureMask, subject_ids: &[String]) -> Result<Self, MtnetError>
    where
        I: IntoIterator<Item = &'a FeatureRow>,
    {
        let index: HashMap<&str, usize> =
            subject_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let f = mask.count();
        let mut flat = Vec::new();
        let mut identity = Vec::new();
        let mut bmi = Vec::new();
        for r in rows {
            if r.features.mask() != mask {
                return Err(MtnetError::MaskMismatch {
                    expected: mask_string(&mask),
                    found: mask_string(&r.features.mask()),
                });
            }
            let id = *index
                .get(r.subject_id.as_str())
                .ok_or_else(|| MtnetError::UnknownSubject(r.subject_id.clone()))?;
            flat.extend(r.features.model_input());
            identity.push(id);
            bmi.push(r.bmi);
        }
        let n = identity.len();
        let inputs = Array2::from_shape_vec((n, f), flat).expect("row width equals mask count");
        Ok(TrainingSet {
            mask,
            inputs,
            identity,
            bmi,
            subject_ids: subject_ids.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.identity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identity.is_empty()
    }
}

/// Summary of the optimizer run, stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub evaluations: usize,
    pub fallbacks: usize,
    pub stop: StopReason,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_grad_norm: f64,
}

impl From<&OptimTrace> for TrainSummary {
    fn from(t: &OptimTrace) -> Self {
        TrainSummary {
            iterations: t.iterations,
            evaluations: t.evaluations,
            fallbacks: t.fallbacks,
            stop: t.stop,
            initial_loss: t.losses[0],
            final_loss: *t.losses.last().expect("at least the start loss"),
            final_grad_norm: t.final_grad_norm,
        }
    }
}

/// A trained network with everything needed to apply it to new frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultitaskModel {
    pub architecture: Architecture,
    pub params: Vec<f64>,
    pub normalizer: Normalizer,
    pub mask: FeatureMask,
    pub subject_ids: Vec<String>,
    pub config: TrainConfig,
    pub training: Option<TrainSummary>,
    pub bmi_class_head: Option<LogisticHead>,
    pub grid: Option<GridSpec>,
}

/// The training loss as an [`Objective`] over θ.
pub struct NetworkObjective<'a> {
    pub arch: &'a Architecture,
    pub batch: &'a Batch,
    pub weight_decay: f64,
    pub exec: Execution,
}

impl Objective for NetworkObjective<'_> {
    fn dim(&self) -> usize {
        self.arch.n_params()
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        network::loss_and_grad(self.arch, x, self.batch, self.weight_decay, self.exec, grad)
    }
}

/// Trains a model on `set`. Deterministic given `(set, cfg)`.
pub fn train(set: &TrainingSet, cfg: &TrainConfig, exec: Execution) -> Result<(MultitaskModel, OptimTrace), MtnetError> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(MtnetError::EmptyBatch);
    }
    if set.subject_ids.is_empty() {
        return Err(MtnetError::InvalidConfig("at least one subject is required".into()));
    }
    if let Some(&bad) = set.identity.iter().find(|&&i| i >= set.subject_ids.len()) {
        return Err(MtnetError::LabelOutOfRange {
            label: bad,
            n_classes: set.subject_ids.len(),
        });
    }
    let arch = Architecture {
        input_dim: set.inputs.ncols(),
        hidden: cfg.hidden.clone(),
        n_subjects: set.subject_ids.len(),
    };
    arch.validate()?;
    let normalizer = Normalizer::fit(set.inputs.view());
    let batch = Batch::new(
        normalizer.normalize_matrix(set.inputs.view()),
        set.identity.clone(),
        set.bmi.clone(),
    )?;
    let theta0 = network::init_params(&arch, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let obj = NetworkObjective {
        arch: &arch,
        batch: &batch,
        weight_decay: cfg.weight_decay,
        exec,
    };
    let (params, trace) = match cfg.optimizer {
        OptimizerKind::Lbfgs => optim::minimize_lbfgs(
            &obj,
            &theta0,
            &LbfgsConfig {
                memory: cfg.lbfgs_memory,
                max_iterations: cfg.max_iterations,
                grad_tol: cfg.grad_tol,
                rel_loss_tol: cfg.rel_loss_tol,
                ..LbfgsConfig::default()
            },
        ),
        OptimizerKind::FirstOrderAdaptive => optim::minimize_adam(
            &obj,
            &theta0,
            &AdamConfig {
                learning_rate: cfg.learning_rate,
                max_iterations: cfg.max_iterations,
                grad_tol: cfg.grad_tol,
                ..AdamConfig::default()
            },
        ),
    };
    if params.iter().any(|v| !v.is_finite()) {
        return Err(MtnetError::NonFinite);
    }
    log::info!(
        "trained {} parameters: {} iterations, loss {:.6} -> {:.6}, stop {:?}",
        params.len(),
        trace.iterations,
        trace.losses[0],
        trace.losses.last().copied().unwrap_or(f64::NAN),
        trace.stop
    );
    let model = MultitaskModel {
        architecture: arch,
        params,
        normalizer,
        mask: set.mask,
        subject_ids: set.subject_ids.clone(),
        config: cfg.clone(),
        training: Some(TrainSummary::from(&trace)),
        bmi_class_head: None,
        grid: None,
    };
    Ok((model, trace))
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: MultitaskModel,
}

impl MultitaskModel {
    fn check_width(&self, width: usize) -> Result<(), MtnetError> {
        if width != self.architecture.input_dim {
            return Err(MtnetError::DimensionMismatch {
                expected: self.architecture.input_dim,
                found: width,
            });
        }
        Ok(())
    }

    /// Applies the model to one feature vector, which must carry the
    /// model's mask.
    pub fn forward(&self, features: &FeatureVector) -> Result<MultitaskOutput, MtnetError> {
        if features.mask() != self.mask {
            return Err(MtnetError::MaskMismatch {
                expected: mask_string(&self.mask),
                found: mask_string(&features.mask()),
            });
        }
        let x = features.model_input();
        let x = Array2::from_shape_vec((1, x.len()), x).expect("one row");
        let (p, b) = self.predict(x.view())?;
        Ok(MultitaskOutput {
            identity_probs: p.row(0).to_vec(),
            bmi_estimate: b[0],
        })
    }

    /// Identity probabilities and BMI estimates for raw input rows.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>), MtnetError> {
        self.check_width(inputs.ncols())?;
        let z = self.normalizer.normalize_matrix(inputs);
        Ok(network::forward(&self.architecture, &self.params, z.view()))
    }

    /// Last-hidden-layer activations for raw input rows.
    pub fn hidden_features(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>, MtnetError> {
        self.check_width(inputs.ncols())?;
        let z = self.normalizer.normalize_matrix(inputs);
        Ok(network::last_hidden(&self.architecture, &self.params, z.view()))
    }

    /// Fits the post-hoc BMI-class head on the last-hidden-layer
    /// activations of `inputs`, with the model's weight decay.
    pub fn fit_bmi_class_head(&mut self, inputs: ArrayView2<f64>, labels: &[usize]) -> Result<OptimTrace, MtnetError> {
        let h = self.hidden_features(inputs)?;
        let (head, trace) = LogisticHead::fit(
            h.view(),
            labels,
            BMI_CLASSES,
            self.config.weight_decay,
            self.config.grad_tol,
            5_000,
        )?;
        self.bmi_class_head = Some(head);
        Ok(trace)
    }

    pub fn predict_bmi_classes(&self, inputs: ArrayView2<f64>) -> Result<Vec<usize>, MtnetError> {
        let head = self.bmi_class_head.as_ref().ok_or(MtnetError::NoClassHead)?;
        Ok(head.predict(self.hidden_features(inputs)?.view()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        })
        .expect("model serializes")
    }

    /// Parses a model file; `expected_mask`, if given, must equal the
    /// model's mask.
    pub fn from_json(text: &str, path: &Path, expected_mask: Option<FeatureMask>) -> Result<Self, MtnetError> {
        let fmt = |message: String| MtnetError::Format {
            path: path.to_path_buf(),
            message,
        };
        let file: ModelFile = serde_json::from_str(text).map_err(|e| fmt(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(fmt(format!("not a model file (format {:?})", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(fmt(format!("unsupported model version {}", file.version)));
        }
        let m = file.model;
        m.architecture.validate()?;
        if m.params.len() != m.architecture.n_params() {
            return Err(fmt(format!(
                "expected {} parameters, found {}",
                m.architecture.n_params(),
                m.params.len()
            )));
        }
        if m.params.iter().any(|v| !v.is_finite()) {
            return Err(fmt("non-finite parameter".into()));
        }
        if m.normalizer.dim() != m.architecture.input_dim
            || m.normalizer.std.len() != m.architecture.input_dim
            || m.normalizer.std.iter().any(|s| s.is_nan() || *s <= 0.0)
        {
            return Err(fmt("inconsistent normalization statistics".into()));
        }
        if m.mask.count() != m.architecture.input_dim || m.subject_ids.len() != m.architecture.n_subjects {
            return Err(fmt("mask or subject list disagrees with the architecture".into()));
        }
        if let Some(expected) = expected_mask {
            if expected != m.mask {
                return Err(MtnetError::MaskMismatch {
                    expected: mask_string(&m.mask),
                    found: mask_string(&expected),
                });
            }
        }
        Ok(m)
    }

    pub fn load(path: &Path, expected_mask: Option<FeatureMask>) -> Result<Self, MtnetError> {
        let text = std::fs::read_to_string(path).map_err(|source| MtnetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path, expected_mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Feature, FeatureVector, FEATURE_COUNT};
    use rand::Rng;

    fn small_cfg(seed: u64, iters: usize) -> TrainConfig {
        TrainConfig {
            max_iterations: iters,
            hidden: vec![8, 8],
            seed,
            ..Default::default()
        }
    }

    fn toy_rows() -> (Vec<FeatureRow>, Vec<String>) {
        // Two subjects separated along feature 0; BMI tied to the subject.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ids = vec!["A".to_string(), "B".to_string()];
        let rows = (0..20)
            .map(|i| {
                let s = i % 2;
                let mut v = [0.0; FEATURE_COUNT];
                for x in v.iter_mut() {
                    *x = rng.random_range(-1.0..1.0);
                }
                v[0] = if s == 0 { -2.0 } else { 2.0 } + rng.random_range(-0.5..0.5);
                FeatureRow {
                    subject_id: ids[s].clone(),
                    posture_id: 1,
                    frame_index: i as u32,
                    features: FeatureVector::new(v, FeatureMask::all()),
                    bmi: if s == 0 { 20.0 } else { 30.0 },
                }
            })
            .collect();
        (rows, ids)
    }

    #[test]
    fn uniform_cross_entropy_values() {
        assert!((-(1.0f64 / 13.0).ln() - 13f64.ln()).abs() < 1e-15);
        assert!((13f64.ln() - 2.5649).abs() < 1e-4);
    }

    #[test]
    fn separable_two_subjects() {
        let (rows, ids) = toy_rows();
        let set = TrainingSet::from_rows(&rows, FeatureMask::all(), &ids).unwrap();
        let (model, trace) = train(&set, &small_cfg(1, 200), Execution::default()).unwrap();
        assert!(trace.iterations <= 200);
        assert!(trace.losses.windows(2).all(|w| w[1] <= w[0]));
        let (p, _) = model.predict(set.inputs.view()).unwrap();
        let correct = p
            .rows()
            .into_iter()
            .zip(&set.identity)
            .filter(|(r, &y)| argmax(r.iter().copied()) == y)
            .count();
        assert_eq!(correct, set.len());
    }

    #[test]
    fn affine_bmi_single_subject() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ids = vec!["S".to_string()];
        let rows: Vec<FeatureRow> = (0..60)
            .map(|i| {
                let mut v = [0.0; FEATURE_COUNT];
                v.iter_mut().for_each(|x| *x = rng.random_range(0.0..10.0));
                FeatureRow {
                    subject_id: "S".into(),
                    posture_id: 1,
                    frame_index: i,
                    features: FeatureVector::new(v, FeatureMask::all()),
                    bmi: 18.0 + 1.5 * v[4],
                }
            })
            .collect();
        let set = TrainingSet::from_rows(&rows, FeatureMask::all(), &ids).unwrap();
        let (model, _) = train(&set, &small_cfg(3, 500), Execution::default()).unwrap();
        let (_, pred) = model.predict(set.inputs.view()).unwrap();
        let mean = set.bmi.iter().sum::<f64>() / set.len() as f64;
        let ss_res: f64 = pred.iter().zip(&set.bmi).map(|(p, t)| (p - t).powi(2)).sum();
        let ss_tot: f64 = set.bmi.iter().map(|t| (t - mean).powi(2)).sum();
        let r2 = 1.0 - ss_res / ss_tot;
        assert!(r2 > 0.999, "{r2}");
    }

    #[test]
    fn training_is_deterministic() {
        let (rows, ids) = toy_rows();
        let set = TrainingSet::from_rows(&rows, FeatureMask::all(), &ids).unwrap();
        let (a, _) = train(&set, &small_cfg(7, 30), Execution::Sequential).unwrap();
        let (b, _) = train(&set, &small_cfg(7, 30), Execution::Parallel).unwrap();
        assert!(a.params.iter().zip(&b.params).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn adaptive_optimizer_trains() {
        let (rows, ids) = toy_rows();
        let set = TrainingSet::from_rows(&rows, FeatureMask::all(), &ids).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::FirstOrderAdaptive,
            learning_rate: 1e-2,
            ..small_cfg(1, 300)
        };
        let (_, trace) = train(&set, &cfg, Execution::default()).unwrap();
        assert!(trace.losses.last().unwrap() < &(0.5 * trace.losses[0]));
    }

    #[test]
    fn model_file_round_trip_and_mask_check() {
        let (rows, ids) = toy_rows();
        let set = TrainingSet::from_rows(&rows, FeatureMask::all(), &ids).unwrap();
        let (model, _) = train(&set, &small_cfg(1, 5), Execution::default()).unwrap();
        let text = model.to_json();
        let p = Path::new("model.json");
        let back = MultitaskModel::from_json(&text, p, Some(FeatureMask::all())).unwrap();
        assert_eq!(back, model);
        let other = FeatureMask::all().without(Feature::Max);
        assert!(matches!(
            MultitaskModel::from_json(&text, p, Some(other)),
            Err(MtnetError::MaskMismatch { .. })
        ));
        let fv = FeatureVector::new([0.0; FEATURE_COUNT], other);
        assert!(matches!(model.forward(&fv), Err(MtnetError::MaskMismatch { .. })));
        let out = model.forward(&rows[0].features).unwrap();
        assert!((out.identity_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bad_config_is_rejected() {
        let mut cfg = TrainConfig::with_seed(1);
        cfg.grad_tol = 0.0;
        assert!(cfg.validate().is_err());
        cfg = TrainConfig::with_seed(1);
        cfg.weight_decay = -1.0;
        assert!(cfg.validate().is_err());
    }
}
