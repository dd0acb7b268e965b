//! Spatio-temporal denoising: a spatial median filter on every frame, then
//! a per-sensor Gaussian along time within each recording session.
//!
//! A session is a maximal run of consecutive frames sharing
//! `(subject_id, posture_id)`; temporal smoothing never crosses sessions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Corpus, DatasetError, PressureFrame};
use crate::exec::{self, Execution};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("median window must be odd and positive, got {0}")]
    EvenWindow(usize),
    #[error("gaussian window must be positive")]
    EmptyKernel,
    #[error("gaussian sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("session is empty")]
    EmptySession,
    #[error("session mixes {0:?} and {1:?}")]
    MixedSession((String, u8), (String, u8)),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub median_window: usize,
    pub gaussian_window: usize,
    pub gaussian_sigma: f64,
    /// Pass frames through untouched.
    pub skip_filters: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            median_window: 3,
            gaussian_window: 5,
            gaussian_sigma: 1.0,
            skip_filters: false,
        }
    }
}

/// Replaces each cell with the median of its `window × window`
/// neighborhood clipped to the grid. Even-sized neighborhoods (at the
/// borders) take the mean of the two middle values.
pub fn median_filter(frame: &PressureFrame, window: usize) -> Result<PressureFrame, PreprocessError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(PreprocessError::EvenWindow(window));
    }
    let (rows, cols) = (frame.grid.rows, frame.grid.cols);
    let half = window / 2;
    let mut out = vec![0.0; rows * cols];
    let mut hood = Vec::with_capacity(window * window);
    for r in 0..rows {
        let (r0, r1) = (r.saturating_sub(half), (r + half).min(rows - 1));
        for c in 0..cols {
            let (c0, c1) = (c.saturating_sub(half), (c + half).min(cols - 1));
            hood.clear();
            for rr in r0..=r1 {
                hood.extend_from_slice(&frame.values[rr * cols + c0..=rr * cols + c1]);
            }
            out[r * cols + c] = median(&mut hood);
        }
    }
    Ok(frame.with_values(out))
}

fn median(xs: &mut [f64]) -> f64 {
    let n = xs.len();
    xs.sort_unstable_by(|a, b| a.total_cmp(b));
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Unit-sum discrete Gaussian with `window` taps centered on zero.
pub fn gaussian_kernel(window: usize, sigma: f64) -> Result<Vec<f64>, PreprocessError> {
    if window == 0 {
        return Err(PreprocessError::EmptyKernel);
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(PreprocessError::BadSigma(sigma));
    }
    let center = (window as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..window)
        .map(|i| {
            let d = i as f64 - center;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|k| k / total).collect())
}

/// Mirror index into `0..n` with the edge sample repeated
/// (`... b a | a b c ... | c b ...`).
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Smooths each sensor along time with a Gaussian kernel, reflecting at
/// the session ends. All frames must share one `(subject_id, posture_id)`.
pub fn temporal_gaussian(
    session: &[PressureFrame],
    window: usize,
    sigma: f64,
) -> Result<Vec<PressureFrame>, PreprocessError> {
    let first = session.first().ok_or(PreprocessError::EmptySession)?;
    for f in session {
        if f.subject_id != first.subject_id || f.posture_id != first.posture_id {
            return Err(PreprocessError::MixedSession(
                (first.subject_id.clone(), first.posture_id),
                (f.subject_id.clone(), f.posture_id),
            ));
        }
    }
    let kernel = gaussian_kernel(window, sigma)?;
    let n = session.len();
    // Offsets run from -floor((w-1)/2); even windows lean one tap forward.
    let lead = (window as isize - 1) / 2;
    let cells = first.values.len();
    let mut lo = vec![f64::INFINITY; cells];
    let mut hi = vec![f64::NEG_INFINITY; cells];
    for f in session {
        for (cell, &v) in f.values.iter().enumerate() {
            lo[cell] = lo[cell].min(v);
            hi[cell] = hi[cell].max(v);
        }
    }
    let out = (0..n)
        .map(|t| {
            let mut values = vec![0.0; cells];
            for (k, &w) in kernel.iter().enumerate() {
                let src = &session[reflect(t as isize + k as isize - lead, n)].values;
                for (o, &v) in values.iter_mut().zip(src) {
                    *o += w * v;
                }
            }
            // Convex combination; clamp away rounding past the input range.
            for (cell, o) in values.iter_mut().enumerate() {
                *o = o.clamp(lo[cell], hi[cell]);
            }
            session[t].with_values(values)
        })
        .collect();
    Ok(out)
}

/// Splits frames into maximal runs sharing `(subject_id, posture_id)`.
pub fn split_sessions(frames: &[PressureFrame]) -> Vec<&[PressureFrame]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=frames.len() {
        let boundary = i == frames.len()
            || frames[i].subject_id != frames[start].subject_id
            || frames[i].posture_id != frames[start].posture_id;
        if boundary && i > start {
            out.push(&frames[start..i]);
            start = i;
        }
    }
    out
}

/// Median-filters every frame, then smooths each session along time.
pub fn preprocess_corpus(
    corpus: &Corpus,
    config: &PreprocessConfig,
    exec: Execution,
) -> Result<Corpus, PreprocessError> {
    if config.skip_filters {
        return Ok(corpus.clone());
    }
    let spatial: Vec<PressureFrame> = exec::map(exec, &corpus.frames, |f| {
        median_filter(f, config.median_window)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let sessions = split_sessions(&spatial);
    let smoothed = exec::map(exec, &sessions, |s| {
        temporal_gaussian(s, config.gaussian_window, config.gaussian_sigma)
    });
    let mut frames = Vec::with_capacity(spatial.len());
    for s in smoothed {
        frames.extend(s?);
    }
    let mut out = corpus.with_frames(frames)?;
    let mut provenance = corpus.provenance.clone().unwrap_or_else(|| serde_json::json!({}));
    if let Some(map) = provenance.as_object_mut() {
        map.insert(
            "preprocess".into(),
            serde_json::to_value(config).expect("config serializes"),
        );
    }
    out.provenance = Some(provenance);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::GridSpec;
    use proptest::prelude::*;

    fn frame(rows: usize, cols: usize, values: Vec<f64>) -> PressureFrame {
        let grid = GridSpec::new(rows, cols, 1000.0, 1.0).unwrap();
        PressureFrame::new(grid, values, "s", 1, 0).unwrap()
    }

    fn session(values: &[f64]) -> Vec<PressureFrame> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let mut f = frame(1, 2, vec![v, 7.0]);
                f.frame_index = i as u32;
                f
            })
            .collect()
    }

    #[test]
    fn median_constant_and_identity() {
        let f = frame(4, 5, vec![12.0; 20]);
        assert_eq!(median_filter(&f, 3).unwrap(), f);
        let g = frame(3, 3, (0..9).map(|i| i as f64 * 3.5).collect());
        assert_eq!(median_filter(&g, 1).unwrap(), g);
    }

    #[test]
    fn median_removes_isolated_spike() {
        let mut v = vec![0.0; 25];
        v[12] = 500.0;
        let out = median_filter(&frame(5, 5, v), 3).unwrap();
        assert!(out.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn median_border_uses_clipped_window() {
        // Corner (0,0) sees 1, 2, 4, 5 → (2 + 4) / 2.
        let f = frame(3, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let out = median_filter(&f, 3).unwrap();
        assert_eq!(out.at(0, 0), 3.0);
        assert_eq!(out.at(1, 1), 5.0);
        // Edge (0,1) sees 1..=6 → (3 + 4) / 2.
        assert_eq!(out.at(0, 1), 3.5);
    }

    #[test]
    fn median_rejects_even_window() {
        let f = frame(2, 2, vec![0.0; 4]);
        assert!(matches!(median_filter(&f, 2), Err(PreprocessError::EvenWindow(2))));
        assert!(median_filter(&f, 0).is_err());
    }

    #[test]
    fn gaussian_constant_and_single() {
        let s = session(&[4.0; 6]);
        let out = temporal_gaussian(&s, 5, 1.0).unwrap();
        for f in &out {
            assert_eq!(f.values, vec![4.0, 7.0]);
        }
        let one = session(&[9.0]);
        assert_eq!(temporal_gaussian(&one, 5, 1.0).unwrap(), one);
    }

    #[test]
    fn gaussian_impulse_reproduces_kernel() {
        // Hand kernel: exp(-d²/2) for d = -2..=2, normalized.
        let raw = [(-2.0f64).exp(), (-0.5f64).exp(), 1.0, (-0.5f64).exp(), (-2.0f64).exp()];
        let total: f64 = raw.iter().sum();
        let s = session(&[0.0, 0.0, 1000.0, 0.0, 0.0]);
        let out = temporal_gaussian(&s, 5, 1.0).unwrap();
        for (t, f) in out.iter().enumerate() {
            let expected = 1000.0 * raw[4 - t] / total;
            assert!((f.values[0] - expected).abs() < 1e-9, "t={t}: {} vs {expected}", f.values[0]);
        }
        assert!((out[2].values[0] - 402.619_947).abs() < 1e-5);
    }

    #[test]
    fn gaussian_errors() {
        assert!(matches!(temporal_gaussian(&[], 5, 1.0), Err(PreprocessError::EmptySession)));
        let mut s = session(&[1.0, 2.0]);
        s[1].posture_id = 2;
        assert!(matches!(temporal_gaussian(&s, 5, 1.0), Err(PreprocessError::MixedSession(..))));
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 4, 4, 3, 2]);
        assert_eq!(reflect(-2, 1), 0);
    }

    #[test]
    fn sessions_split_on_posture_change() {
        let mut frames = session(&[1.0, 2.0, 3.0, 4.0]);
        frames[2].posture_id = 2;
        frames[3].posture_id = 2;
        let parts = split_sessions(&frames);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].len(), 2);
    }

    proptest! {
        #[test]
        fn filters_stay_within_input_bounds(
            vals in proptest::collection::vec(0.0f64..1000.0, 1..12),
            grid_vals in proptest::collection::vec(0.0f64..1000.0, 20),
        ) {
            let s = session(&vals);
            let out = temporal_gaussian(&s, 5, 1.0).unwrap();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(out.len(), s.len());
            for f in &out {
                prop_assert!(f.values[0] >= lo && f.values[0] <= hi);
            }
            let f = frame(4, 5, grid_vals.clone());
            let m = median_filter(&f, 3).unwrap();
            let lo = grid_vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = grid_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m.values.iter().all(|&v| v >= lo && v <= hi));
        }
    }
}
