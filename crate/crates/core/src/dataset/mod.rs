//! Corpus types, BMI ground truth, and the canonical on-disk layout.
//!
//! A corpus directory holds three files:
//!
//! - `manifest.json`: grid geometry, corpus name and the active feature mask.
//! - `subjects.csv`: `subject_id,height_m,weight_kg,age_years`.
//! - `frames.csv`: `subject_id,posture_id,frame_index,v0,...` in row-major
//!   order, one frame per line.

mod adapters;
mod io;
mod posture;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMask;

pub use adapters::{ingest_hrlros, ingest_pmatdata, RawSubjectTable};
pub use io::{load_corpus, read_subjects, save_corpus, FRAMES_FILE, MANIFEST_FILE, SUBJECTS_FILE};
pub use posture::{merge_postures, PostureMap};

/// Lower and upper bounds (exclusive) a ground-truth BMI must fall within.
pub const BMI_SANITY_BAND: (f64, f64) = (10.0, 60.0);

/// Minimum number of active features a corpus mask may carry.
pub const MIN_ACTIVE_FEATURES: usize = 12;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{what} must be positive and finite, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("frame has {got} values but the grid has {expected} cells")]
    FrameLength { expected: usize, got: usize },
    #[error("value {value} at cell {cell} is outside [0, {ceiling}]")]
    ValueOutOfRange { cell: usize, value: f64, ceiling: f64 },
    #[error("subject {subject}: BMI {bmi:.3} is outside the sanity band (10, 60)")]
    ImplausibleBmi { subject: String, bmi: f64 },
    #[error("frame references unknown subject {0:?}")]
    UnknownSubject(String),
    #[error("subject {0:?} is listed more than once")]
    DuplicateSubject(String),
    #[error("feature mask has {0} active features; at least {MIN_ACTIVE_FEATURES} are required")]
    MaskTooSparse(usize),
    #[error("raw posture id {0} is outside 1..=17")]
    PostureOutOfRange(i64),
    #[error("posture map: {0}")]
    PostureMap(String),
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn check_positive(what: &'static str, value: f64) -> Result<f64, DatasetError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(DatasetError::NonPositive { what, value })
    }
}

/// Body mass index in kg/m².
pub fn compute_bmi(weight_kg: f64, height_m: f64) -> Result<f64, DatasetError> {
    let w = check_positive("weight_kg", weight_kg)?;
    let h = check_positive("height_m", height_m)?;
    Ok(w / (h * h))
}

/// Sensor grid geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Largest value a sensor can report.
    pub sensor_ceiling: f64,
    pub frame_rate_hz: f64,
}

impl GridSpec {
    pub fn new(
        rows: usize,
        cols: usize,
        sensor_ceiling: f64,
        frame_rate_hz: f64,
    ) -> Result<Self, DatasetError> {
        let grid = GridSpec {
            rows,
            cols,
            sensor_ceiling,
            frame_rate_hz,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// 32×64 mat at 1.5 Hz, stored with the long (head-to-toe) axis along
    /// the rows. Raw readings span 0..=1000.
    pub fn pmatdata() -> Self {
        GridSpec {
            rows: 64,
            cols: 32,
            sensor_ceiling: 1000.0,
            frame_rate_hz: 1.5,
        }
    }

    /// 27×64 mat, readings pre-normalized to 0..=1024, long axis along rows.
    pub fn hrlros() -> Self {
        GridSpec {
            rows: 64,
            cols: 27,
            sensor_ceiling: 1024.0,
            frame_rate_hz: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(DatasetError::InvalidGrid(format!(
                "{}x{} grid has no cells",
                self.rows, self.cols
            )));
        }
        check_positive("sensor_ceiling", self.sensor_ceiling)?;
        check_positive("frame_rate_hz", self.frame_rate_hz)?;
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// One snapshot of the sensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureFrame {
    pub grid: GridSpec,
    /// Row-major, `grid.rows * grid.cols` long.
    pub values: Vec<f64>,
    pub subject_id: String,
    pub posture_id: u8,
    pub frame_index: u32,
}

impl PressureFrame {
    pub fn new(
        grid: GridSpec,
        values: Vec<f64>,
        subject_id: impl Into<String>,
        posture_id: u8,
        frame_index: u32,
    ) -> Result<Self, DatasetError> {
        let frame = PressureFrame {
            grid,
            values,
            subject_id: subject_id.into(),
            posture_id,
            frame_index,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.values.len() != self.grid.cells() {
            return Err(DatasetError::FrameLength {
                expected: self.grid.cells(),
                got: self.values.len(),
            });
        }
        let ceiling = self.grid.sensor_ceiling;
        for (cell, &value) in self.values.iter().enumerate() {
            if !(0.0..=ceiling).contains(&value) {
                return Err(DatasetError::ValueOutOfRange {
                    cell,
                    value,
                    ceiling,
                });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid.cols + col]
    }

    /// Same metadata, new values. Values are not re-validated.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.grid.cells());
        PressureFrame {
            grid: self.grid,
            values,
            subject_id: self.subject_id.clone(),
            posture_id: self.posture_id,
            frame_index: self.frame_index,
        }
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sort key used for canonical frame order.
    pub fn order_key(&self) -> (&str, u8, u32) {
        (&self.subject_id, self.posture_id, self.frame_index)
    }
}

/// Anthropometrics for one subject. `bmi` is always derived, never stored
/// independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub height_m: f64,
    pub weight_kg: f64,
    pub age_years: Option<f64>,
    pub bmi: f64,
}

impl SubjectRecord {
    pub fn new(
        subject_id: impl Into<String>,
        height_m: f64,
        weight_kg: f64,
        age_years: Option<f64>,
    ) -> Result<Self, DatasetError> {
        let subject_id = subject_id.into();
        let bmi = compute_bmi(weight_kg, height_m)?;
        if let Some(age) = age_years {
            check_positive("age_years", age)?;
        }
        let (lo, hi) = BMI_SANITY_BAND;
        if !(bmi > lo && bmi < hi) {
            return Err(DatasetError::ImplausibleBmi {
                subject: subject_id,
                bmi,
            });
        }
        Ok(SubjectRecord {
            subject_id,
            height_m,
            weight_kg,
            age_years,
            bmi,
        })
    }
}

/// A validated collection of frames with their subjects.
///
/// Subjects are kept sorted by id and frames in `(subject_id, posture_id,
/// frame_index)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub grid: GridSpec,
    pub subjects: Vec<SubjectRecord>,
    pub frames: Vec<PressureFrame>,
    pub feature_mask: FeatureMask,
    /// Free-form record of how the corpus was produced.
    pub provenance: Option<serde_json::Value>,
}

impl Corpus {
    pub fn new(
        name: impl Into<String>,
        grid: GridSpec,
        mut subjects: Vec<SubjectRecord>,
        mut frames: Vec<PressureFrame>,
        feature_mask: FeatureMask,
    ) -> Result<Self, DatasetError> {
        grid.validate()?;
        let active = feature_mask.count();
        if active < MIN_ACTIVE_FEATURES {
            return Err(DatasetError::MaskTooSparse(active));
        }
        subjects.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        for pair in subjects.windows(2) {
            if pair[0].subject_id == pair[1].subject_id {
                return Err(DatasetError::DuplicateSubject(pair[0].subject_id.clone()));
            }
        }
        for frame in &frames {
            if frame.grid != grid {
                return Err(DatasetError::InvalidGrid(format!(
                    "frame {:?} has grid {:?}, corpus has {:?}",
                    frame.order_key(),
                    frame.grid,
                    grid
                )));
            }
            frame.validate()?;
            if subjects
                .binary_search_by(|s| s.subject_id.as_str().cmp(&frame.subject_id))
                .is_err()
            {
                return Err(DatasetError::UnknownSubject(frame.subject_id.clone()));
            }
        }
        frames.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        Ok(Corpus {
            name: name.into(),
            grid,
            subjects,
            frames,
            feature_mask,
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, provenance: serde_json::Value) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn subject(&self, subject_id: &str) -> Option<&SubjectRecord> {
        self.subjects
            .binary_search_by(|s| s.subject_id.as_str().cmp(subject_id))
            .ok()
            .map(|i| &self.subjects[i])
    }

    /// Same subjects and metadata with a replaced frame sequence.
    pub fn with_frames(&self, frames: Vec<PressureFrame>) -> Result<Self, DatasetError> {
        let mut corpus = Corpus::new(
            self.name.clone(),
            self.grid,
            self.subjects.clone(),
            frames,
            self.feature_mask,
        )?;
        corpus.provenance = self.provenance.clone();
        Ok(corpus)
    }
}
