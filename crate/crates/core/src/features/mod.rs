//! The 14 canonical per-frame features.
//!
//! Twelve are order statistics, moments and threshold counts over the cell
//! values ([`extract_statistical`]); the last two summarize the isolines
//! traced by marching squares at a ladder of contour levels
//! ([`extract_contour_features`]).

mod contour;
mod stats;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::PressureFrame;
use crate::exec::{self, Execution};

pub use contour::{
    extract_contour_features, select_contour_levels, trace_contours, trace_isolines,
    ContourFeatures, ContourSet, Point, Polyline, MAX_CONTOUR_LEVELS,
};
pub use stats::{extract_statistical, StatisticalFeatures, ENTROPY_BINS, THRESHOLDS};
pub use table::{FeatureRow, FeatureTable};

pub const FEATURE_COUNT: usize = 14;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("contour level {level} is outside ({min}, {max}]")]
    LevelOutOfRange { level: f64, min: f64, max: f64 },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: std::path::PathBuf,
        line: u64,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Canonical feature order. The discriminant is the column index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Max = 0,
    Mode,
    Range,
    Entropy,
    Mean,
    Variance,
    Skewness,
    Kurtosis,
    NonzeroCount,
    Count20To60,
    Count60To100,
    CountAbove100,
    NumIsolines,
    IsolineCoordSum,
}

impl Feature {
    pub const ALL: [Feature; FEATURE_COUNT] = [
        Feature::Max,
        Feature::Mode,
        Feature::Range,
        Feature::Entropy,
        Feature::Mean,
        Feature::Variance,
        Feature::Skewness,
        Feature::Kurtosis,
        Feature::NonzeroCount,
        Feature::Count20To60,
        Feature::Count60To100,
        Feature::CountAbove100,
        Feature::NumIsolines,
        Feature::IsolineCoordSum,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Feature> {
        Feature::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Max => "max",
            Feature::Mode => "mode",
            Feature::Range => "range",
            Feature::Entropy => "entropy",
            Feature::Mean => "mean",
            Feature::Variance => "variance",
            Feature::Skewness => "skewness",
            Feature::Kurtosis => "kurtosis",
            Feature::NonzeroCount => "nonzero_count",
            Feature::Count20To60 => "count_20_60",
            Feature::Count60To100 => "count_60_100",
            Feature::CountAbove100 => "count_above_100",
            Feature::NumIsolines => "num_isolines",
            Feature::IsolineCoordSum => "isoline_coord_sum",
        }
    }
}

impl std::fmt::Display for Feature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which of the 14 features feed the models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureMask([bool; FEATURE_COUNT]);

impl FeatureMask {
    pub fn all() -> Self {
        FeatureMask([true; FEATURE_COUNT])
    }

    pub fn none() -> Self {
        FeatureMask([false; FEATURE_COUNT])
    }

    pub fn from_bits(bits: [bool; FEATURE_COUNT]) -> Self {
        FeatureMask(bits)
    }

    pub fn bits(&self) -> [bool; FEATURE_COUNT] {
        self.0
    }

    pub fn contains(&self, f: Feature) -> bool {
        self.0[f.index()]
    }

    pub fn with(mut self, f: Feature) -> Self {
        self.0[f.index()] = true;
        self
    }

    pub fn without(mut self, f: Feature) -> Self {
        self.0[f.index()] = false;
        self
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn active(&self) -> impl Iterator<Item = Feature> + '_ {
        Feature::ALL.into_iter().filter(|f| self.contains(*f))
    }
}

impl Default for FeatureMask {
    fn default() -> Self {
        Self::all()
    }
}

/// All 14 features of one frame. Masked features are absent: they read as
/// `None` and are left out of [`FeatureVector::model_input`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: [f64; FEATURE_COUNT],
    mask: FeatureMask,
}

impl FeatureVector {
    /// Masked slots are zeroed so that equality ignores whatever was there.
    pub fn new(mut values: [f64; FEATURE_COUNT], mask: FeatureMask) -> Self {
        for f in Feature::ALL {
            if !mask.contains(f) {
                values[f.index()] = 0.0;
            }
        }
        FeatureVector { values, mask }
    }

    pub fn get(&self, f: Feature) -> Option<f64> {
        self.mask.contains(f).then(|| self.values[f.index()])
    }

    pub fn mask(&self) -> FeatureMask {
        self.mask
    }

    /// Active features in canonical order.
    pub fn model_input(&self) -> Vec<f64> {
        self.mask.active().map(|f| self.values[f.index()]).collect()
    }

    /// Re-mask; features newly switched on read as 0.
    pub fn masked(&self, mask: FeatureMask) -> Self {
        let mut values = self.values;
        for f in Feature::ALL {
            if !self.mask.contains(f) {
                values[f.index()] = 0.0;
            }
        }
        FeatureVector::new(values, mask)
    }

    /// Canonical-order slots with masked features as `None`.
    pub fn slots(&self) -> [Option<f64>; FEATURE_COUNT] {
        let mut out = [None; FEATURE_COUNT];
        for f in self.mask.active() {
            out[f.index()] = Some(self.values[f.index()]);
        }
        out
    }
}

/// Every feature of `frame`, masked by `mask`.
pub fn extract_all(frame: &PressureFrame, mask: FeatureMask) -> FeatureVector {
    let stats = extract_statistical(frame);
    let contour = extract_contour_features(frame);
    let mut values = [0.0; FEATURE_COUNT];
    values[..12].copy_from_slice(&stats.as_array());
    values[Feature::NumIsolines.index()] = contour.num_isolines as f64;
    values[Feature::IsolineCoordSum.index()] = contour.isoline_coord_sum;
    FeatureVector::new(values, mask)
}

/// [`extract_all`] over many frames; output order matches input order.
pub fn extract_batch(
    frames: &[PressureFrame],
    mask: FeatureMask,
    exec: Execution,
) -> Vec<FeatureVector> {
    exec::map(exec, frames, |f| extract_all(f, mask))
}
