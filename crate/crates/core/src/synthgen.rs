//! Deterministic synthetic pressure maps with known BMI and identity.
//!
//! Each subject is drawn as five anisotropic Gaussian blobs (head, torso,
//! pelvis and two legs) laid out along the rows of the grid. Blob
//! amplitudes are the subject's weight times fixed mass fractions, the
//! longitudinal layout scales with height, and the transverse spread grows
//! with BMI, so heavier subjects press harder over a larger footprint.
//!
//! Randomness comes from ChaCha8 seeded with the caller's 64-bit seed.
//! Subjects are drawn from stream 0 and subject `k`'s frames from stream
//! `k + 1`, which keeps corpora reproducible across platforms and lets
//! subjects render in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Corpus, DatasetError, GridSpec, PressureFrame, SubjectRecord};
use crate::exec::{self, Execution};
use crate::features::FeatureMask;

pub const HEIGHT_RANGE_M: (f64, f64) = (1.55, 1.95);
pub const WEIGHT_RANGE_KG: (f64, f64) = (45.0, 110.0);

/// Mass fractions for head, torso, pelvis, left leg, right leg.
pub const MASS_FRACTIONS: [f64; 5] = [0.08, 0.43, 0.33, 0.08, 0.08];

/// Peak pressure per kilogram of blob amplitude.
const PRESSURE_GAIN: f64 = 5.0;
/// Rendered values below this read as zero, giving blobs a finite footprint.
const ACTIVATION_FLOOR: f64 = 1.0;
/// Body length in grid rows per meter of height, as a fraction of the rows.
const SPAN_PER_METER: f64 = 0.45;
/// Side postures shift the body by this fraction of the columns.
const SIDE_SHIFT: f64 = 0.15;
/// Side postures narrow transverse spreads by this factor.
const SIDE_NARROWING: f64 = 0.7;
const REFERENCE_BMI: f64 = 22.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("need at least 1 frame per subject")]
    NoFrames,
    #[error("posture set is empty")]
    NoPostures,
    #[error("noise parameters must be finite with dropout in [0, 1]: {0:?}")]
    InvalidNoise(NoiseSpec),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Posture {
    Supine,
    Right,
    Left,
}

impl Posture {
    /// Posture id written to the corpus, following the PmatData numbering
    /// of the three flat base postures.
    pub fn id(self) -> u8 {
        match self {
            Posture::Supine => 1,
            Posture::Right => 2,
            Posture::Left => 3,
        }
    }

    fn lateral_shift(self, cols: usize) -> f64 {
        match self {
            Posture::Supine => 0.0,
            Posture::Right => SIDE_SHIFT * cols as f64,
            Posture::Left => -SIDE_SHIFT * cols as f64,
        }
    }

    fn transverse_scale(self) -> f64 {
        match self {
            Posture::Supine => 1.0,
            Posture::Right | Posture::Left => SIDE_NARROWING,
        }
    }
}

impl std::str::FromStr for Posture {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "supine" => Ok(Posture::Supine),
            "right" => Ok(Posture::Right),
            "left" => Ok(Posture::Left),
            other => Err(format!("unknown posture {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Each cell is scaled by `max(0, 1 + sigma·z)`, `z` standard normal.
    pub multiplicative_sigma: f64,
    /// Probability that a cell reads zero.
    pub dropout_prob: f64,
    /// Standard deviation of the whole-body shift per frame, in cells.
    pub jitter_sigma_cells: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            multiplicative_sigma: 0.0,
            dropout_prob: 0.0,
            jitter_sigma_cells: 0.0,
        }
    }

    pub fn moderate() -> Self {
        NoiseSpec {
            multiplicative_sigma: 0.1,
            dropout_prob: 0.02,
            jitter_sigma_cells: 0.5,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let ok = self.multiplicative_sigma.is_finite()
            && self.multiplicative_sigma >= 0.0
            && self.jitter_sigma_cells.is_finite()
            && self.jitter_sigma_cells >= 0.0
            && (0.0..=1.0).contains(&self.dropout_prob);
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidNoise(*self))
        }
    }
}

/// Per-subject shape variation that makes individuals distinguishable
/// beyond their height and weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyTraits {
    pub shoulder_scale: f64,
    pub hip_scale: f64,
    pub leg_spread: f64,
    pub head_scale: f64,
    /// Longitudinal torso offset as a fraction of body length.
    pub torso_shift: f64,
}

impl BodyTraits {
    pub fn neutral() -> Self {
        BodyTraits {
            shoulder_scale: 1.0,
            hip_scale: 1.0,
            leg_spread: 1.0,
            head_scale: 1.0,
            torso_shift: 0.0,
        }
    }

    fn sample<R: Rng>(rng: &mut R) -> Self {
        BodyTraits {
            shoulder_scale: rng.random_range(0.8..1.2),
            hip_scale: rng.random_range(0.8..1.2),
            leg_spread: rng.random_range(0.7..1.3),
            head_scale: rng.random_range(0.85..1.15),
            torso_shift: rng.random_range(-0.03..0.03),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center_row: f64,
    pub center_col: f64,
    pub sigma_long: f64,
    pub sigma_trans: f64,
    /// Kilograms carried by this blob.
    pub amplitude: f64,
}

/// A subject's supine blob layout on a particular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyModel {
    pub subject: SubjectRecord,
    pub traits: BodyTraits,
    /// Head, torso, pelvis, left leg, right leg.
    pub blobs: [Blob; 5],
}

impl BodyModel {
    pub fn new(subject: SubjectRecord, traits: BodyTraits, grid: &GridSpec) -> Self {
        let rows = grid.rows as f64;
        let mid_col = (grid.cols as f64 - 1.0) / 2.0;
        let span = (SPAN_PER_METER * subject.height_m * rows).min(rows);
        let top = (rows - span) / 2.0;
        let along = |frac: f64| (top + frac * span).clamp(0.0, rows - 1.0);
        let width = (subject.bmi / REFERENCE_BMI).sqrt();
        let w = subject.weight_kg;
        let leg_offset = 0.05 * span * traits.leg_spread;
        let blob = |row: f64, col: f64, sl: f64, st: f64, fraction: f64| Blob {
            center_row: row,
            center_col: col,
            sigma_long: sl * span,
            sigma_trans: st * span,
            amplitude: w * fraction,
        };
        let blobs = [
            blob(along(0.07), mid_col, 0.045 * traits.head_scale, 0.04 * traits.head_scale, MASS_FRACTIONS[0]),
            blob(along(0.30 + traits.torso_shift), mid_col, 0.11, 0.085 * traits.shoulder_scale * width, MASS_FRACTIONS[1]),
            blob(along(0.50), mid_col, 0.07, 0.075 * traits.hip_scale * width, MASS_FRACTIONS[2]),
            blob(along(0.76), mid_col - leg_offset, 0.12, 0.022 * width, MASS_FRACTIONS[3]),
            blob(along(0.76), mid_col + leg_offset, 0.12, 0.022 * width, MASS_FRACTIONS[4]),
        ];
        BodyModel {
            subject,
            traits,
            blobs,
        }
    }

    /// Noise-free rendering, no clipping.
    fn render_clean(&self, grid: &GridSpec, posture: Posture, shift: (f64, f64)) -> Vec<f64> {
        let max_col = grid.cols as f64 - 1.0;
        let max_row = grid.rows as f64 - 1.0;
        let lateral = posture.lateral_shift(grid.cols);
        let narrow = posture.transverse_scale();
        let placed: Vec<(f64, f64, f64, f64, f64)> = self
            .blobs
            .iter()
            .map(|b| {
                let row = (b.center_row + shift.0).clamp(0.0, max_row);
                let col = (b.center_col + lateral + shift.1).clamp(0.0, max_col);
                let st = b.sigma_trans * narrow;
                (row, col, 1.0 / (b.sigma_long * b.sigma_long), 1.0 / (st * st), b.amplitude * PRESSURE_GAIN)
            })
            .collect();
        let mut out = vec![0.0; grid.cells()];
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                let mut v = 0.0;
                for &(br, bc, inv_l, inv_t, peak) in &placed {
                    let dr = r as f64 - br;
                    let dc = c as f64 - bc;
                    v += peak * (-0.5 * (dr * dr * inv_l + dc * dc * inv_t)).exp();
                }
                out[r * grid.cols + c] = if v < ACTIVATION_FLOOR { 0.0 } else { v };
            }
        }
        out
    }

    /// Renders one frame: blobs at posture-dependent offsets, then noise,
    /// then clipping to `[0, sensor_ceiling]`.
    pub fn render<R: Rng>(
        &self,
        grid: &GridSpec,
        posture: Posture,
        noise: &NoiseSpec,
        rng: &mut R,
    ) -> Vec<f64> {
        let shift = if noise.jitter_sigma_cells > 0.0 {
            let dr: f64 = rng.sample(StandardNormal);
            let dc: f64 = rng.sample(StandardNormal);
            (dr * noise.jitter_sigma_cells, dc * noise.jitter_sigma_cells)
        } else {
            (0.0, 0.0)
        };
        let mut values = self.render_clean(grid, posture, shift);
        for v in values.iter_mut() {
            if noise.multiplicative_sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                *v *= (1.0 + noise.multiplicative_sigma * z).max(0.0);
            }
            if noise.dropout_prob > 0.0 && rng.random_bool(noise.dropout_prob) {
                *v = 0.0;
            }
            *v = v.clamp(0.0, grid.sensor_ceiling);
        }
        values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_subjects: usize,
    pub frames_per_subject: usize,
    pub postures: Vec<Posture>,
    pub noise: NoiseSpec,
    pub grid: GridSpec,
    pub seed: u64,
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws subjects and renders their frames.
///
/// Each subject's frames are split into contiguous posture sessions in the
/// order given by `params.postures`.
pub fn generate_corpus(params: &SynthParams) -> Result<Corpus, SynthError> {
    generate_corpus_with(params, Execution::default())
}

pub fn generate_corpus_with(params: &SynthParams, exec: Execution) -> Result<Corpus, SynthError> {
    if params.n_subjects < 2 {
        return Err(SynthError::TooFewSubjects(params.n_subjects));
    }
    if params.frames_per_subject < 1 {
        return Err(SynthError::NoFrames);
    }
    if params.postures.is_empty() {
        return Err(SynthError::NoPostures);
    }
    params.noise.validate()?;
    params.grid.validate()?;

    let mut postures = params.postures.clone();
    postures.dedup();
    let width = params.n_subjects.to_string().len().max(2);
    let mut rng = stream(params.seed, 0);
    let mut bodies = Vec::with_capacity(params.n_subjects);
    for i in 0..params.n_subjects {
        let height = rng.random_range(HEIGHT_RANGE_M.0..=HEIGHT_RANGE_M.1);
        let weight = rng.random_range(WEIGHT_RANGE_KG.0..=WEIGHT_RANGE_KG.1);
        let age = rng.random_range(19u32..=60) as f64;
        let traits = BodyTraits::sample(&mut rng);
        let subject = SubjectRecord::new(format!("S{:0width$}", i + 1), height, weight, Some(age))?;
        bodies.push(BodyModel::new(subject, traits, &params.grid));
    }

    let per_subject = exec::map_range(exec, bodies.len(), |k| {
        let body = &bodies[k];
        let mut rng = stream(params.seed, k as u64 + 1);
        let n = params.frames_per_subject;
        let mut session_index = vec![0u32; postures.len()];
        (0..n)
            .map(|i| {
                let p = i * postures.len() / n;
                let values = body.render(&params.grid, postures[p], &params.noise, &mut rng);
                let idx = session_index[p];
                session_index[p] += 1;
                PressureFrame::new(
                    params.grid,
                    values,
                    body.subject.subject_id.clone(),
                    postures[p].id(),
                    idx,
                )
            })
            .collect::<Result<Vec<_>, _>>()
    });
    let mut frames = Vec::with_capacity(params.n_subjects * params.frames_per_subject);
    for subject_frames in per_subject {
        frames.extend(subject_frames?);
    }
    let subjects = bodies.into_iter().map(|b| b.subject).collect();
    let corpus = Corpus::new(
        format!("synthetic-{}", params.seed),
        params.grid,
        subjects,
        frames,
        FeatureMask::all(),
    )?;
    let provenance = serde_json::to_value(params).expect("params serialize");
    Ok(corpus.with_provenance(serde_json::json!({ "synth": provenance })))
}
