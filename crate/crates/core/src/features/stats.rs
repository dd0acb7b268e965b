use std::collections::BTreeMap;

use crate::dataset::PressureFrame;

/// Histogram resolution for the entropy feature.
pub const ENTROPY_BINS: usize = 256;

/// Pressure thresholds for the three band counts.
pub const THRESHOLDS: [f64; 3] = [20.0, 60.0, 100.0];

/// The twelve non-contour features of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatisticalFeatures {
    pub max: f64,
    pub mode: f64,
    pub range: f64,
    pub entropy: f64,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub nonzero_count: f64,
    pub count_20_60: f64,
    pub count_60_100: f64,
    pub count_above_100: f64,
}

impl StatisticalFeatures {
    /// Canonical order, matching the first twelve [`super::Feature`]s.
    pub fn as_array(&self) -> [f64; 12] {
        [
            self.max,
            self.mode,
            self.range,
            self.entropy,
            self.mean,
            self.variance,
            self.skewness,
            self.kurtosis,
            self.nonzero_count,
            self.count_20_60,
            self.count_60_100,
            self.count_above_100,
        ]
    }
}

/// Computes max, mode, range and entropy over all cells, and the moments
/// over the non-zero cells only.
///
/// Conventions for degenerate frames: with no non-zero cells every moment is
/// 0, and a zero standard deviation gives zero skewness and kurtosis. The
/// mode is taken over values rounded to the nearest integer, ties going to
/// the smaller value. Entropy uses natural log over 256 equal bins spanning
/// `[0, sensor_ceiling]`.
pub fn extract_statistical(frame: &PressureFrame) -> StatisticalFeatures {
    let values = &frame.values;
    let max = frame.max_value();
    let min = frame.min_value();

    let mut nonzero = 0usize;
    let mut sum = 0.0;
    let mut counts = [0usize; 3];
    for &v in values {
        if v > 0.0 {
            nonzero += 1;
            sum += v;
        }
        if v > THRESHOLDS[0] && v < THRESHOLDS[1] {
            counts[0] += 1;
        } else if v > THRESHOLDS[1] && v < THRESHOLDS[2] {
            counts[1] += 1;
        } else if v > THRESHOLDS[2] {
            counts[2] += 1;
        }
    }

    let (mean, variance, skewness, kurtosis) = if nonzero == 0 {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        let n = nonzero as f64;
        let mean = sum / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &v in values.iter().filter(|&&v| v > 0.0) {
            let d = v - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
        if m2 > 0.0 {
            let sd = m2.sqrt();
            (mean, m2, m3 / (sd * m2), m4 / (m2 * m2))
        } else {
            (mean, 0.0, 0.0, 0.0)
        }
    };

    StatisticalFeatures {
        max,
        mode: rounded_mode(values),
        range: max - min,
        entropy: histogram_entropy(values, frame.grid.sensor_ceiling),
        mean,
        variance,
        skewness,
        kurtosis,
        nonzero_count: nonzero as f64,
        count_20_60: counts[0] as f64,
        count_60_100: counts[1] as f64,
        count_above_100: counts[2] as f64,
    }
}

fn rounded_mode(values: &[f64]) -> f64 {
    let mut tally: BTreeMap<i64, usize> = BTreeMap::new();
    for &v in values {
        *tally.entry(v.round() as i64).or_default() += 1;
    }
    // BTreeMap iterates ascending, so the first strict maximum wins ties.
    let mut best = (0i64, 0usize);
    for (value, count) in tally {
        if count > best.1 {
            best = (value, count);
        }
    }
    best.0 as f64
}

fn histogram_entropy(values: &[f64], ceiling: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut bins = [0usize; ENTROPY_BINS];
    let scale = ENTROPY_BINS as f64 / ceiling;
    for &v in values {
        let idx = ((v * scale).floor() as usize).min(ENTROPY_BINS - 1);
        bins[idx] += 1;
    }
    let total = values.len() as f64;
    let e = bins
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum::<f64>();
    // A single occupied bin gives -1·ln 1 = -0.0.
    e.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::GridSpec;

    fn frame(rows: usize, cols: usize, values: Vec<f64>) -> PressureFrame {
        let grid = GridSpec::new(rows, cols, 1000.0, 1.0).unwrap();
        PressureFrame::new(grid, values, "s", 1, 0).unwrap()
    }

    #[test]
    fn two_by_two_hand_example() {
        let s = extract_statistical(&frame(2, 2, vec![0.0, 10.0, 10.0, 20.0]));
        assert_eq!(s.nonzero_count, 3.0);
        assert!((s.mean - 40.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.max, 20.0);
        assert_eq!(s.range, 20.0);
        assert_eq!(s.count_20_60, 0.0);
        assert_eq!(s.count_above_100, 0.0);
        // Non-zero cells 10, 10, 20: deviations -10/3, -10/3, 20/3.
        assert!((s.variance - 200.0 / 9.0).abs() < 1e-12);
        // m3 = (2·(-1000/27) + 8000/27)/3 = 2000/27; σ³ = (200/9)^1.5
        let expected_skew = (2000.0 / 27.0) / (200.0f64 / 9.0).powf(1.5);
        assert!((s.skewness - expected_skew).abs() < 1e-12);
        assert_eq!(s.mode, 10.0);
    }

    #[test]
    fn constant_nonzero_frame() {
        let s = extract_statistical(&frame(3, 3, vec![42.0; 9]));
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.skewness, 0.0);
        assert_eq!(s.kurtosis, 0.0);
        assert_eq!(s.entropy, 0.0);
        assert_eq!(s.mode, 42.0);
        assert_eq!(s.range, 0.0);
    }

    #[test]
    fn single_hot_cell() {
        let mut v = vec![0.0; 16];
        v[5] = 150.0;
        let s = extract_statistical(&frame(4, 4, v));
        assert_eq!(s.count_above_100, 1.0);
        assert_eq!(s.nonzero_count, 1.0);
        assert_eq!(s.mean, 150.0);
        assert_eq!(s.skewness, 0.0);
    }

    #[test]
    fn thresholds_are_strict() {
        let s = extract_statistical(&frame(1, 6, vec![20.0, 21.0, 60.0, 61.0, 100.0, 101.0]));
        assert_eq!(s.count_20_60, 1.0);
        assert_eq!(s.count_60_100, 1.0);
        assert_eq!(s.count_above_100, 1.0);
    }

    #[test]
    fn mode_ties_go_low() {
        let s = extract_statistical(&frame(1, 4, vec![5.4, 4.6, 7.0, 7.2]));
        assert_eq!(s.mode, 5.0);
        let s = extract_statistical(&frame(1, 4, vec![9.0, 3.0, 9.0, 3.0]));
        assert_eq!(s.mode, 3.0);
    }

    #[test]
    fn entropy_of_two_equal_bins() {
        let s = extract_statistical(&frame(1, 4, vec![0.0, 0.0, 999.0, 1000.0]));
        assert!((s.entropy - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
