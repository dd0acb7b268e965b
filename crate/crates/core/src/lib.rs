//! Pressure-mat biometrics: denoise sensor frames, extract per-frame
//! features, and jointly estimate BMI and subject identity with a multitask
//! network, evaluated under k-fold cross-validation against classical
//! baselines.
//!
//! The crate is organized as a pipeline:
//!
//! - [`dataset`]: canonical on-disk corpus, BMI ground truth, raw adapters.
//! - [`synthgen`]: deterministic synthetic corpora with known ground truth.
//! - [`preprocess`]: spatial median then temporal Gaussian filtering.
//! - [`features`]: the 14 canonical per-frame features, including isolines.
//! - [`mtnet`]: the multitask network, its losses, and L-BFGS training.
//! - [`baselines`]: kNN, Gaussian naive Bayes, least squares, k-means.
//! - [`evalharness`]: folds, metrics, cross-validation, feature importance.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and runs sequentially otherwise. Every
//! reduction has a fixed order, so results are bit-identical either way.

pub mod baselines;
pub mod dataset;
pub mod evalharness;
pub mod exec;
pub mod features;
pub mod mtnet;
pub mod preprocess;
pub mod synthgen;

pub use dataset::{Corpus, GridSpec, PressureFrame, SubjectRecord};
pub use features::{Feature, FeatureMask, FeatureVector};
