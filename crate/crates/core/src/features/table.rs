use std::path::Path;

use super::{extract_batch, FeatureError, FeatureMask, FeatureVector, FEATURE_COUNT};
use crate::dataset::Corpus;
use crate::exec::Execution;

/// Feature vector of one frame with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub subject_id: String,
    pub posture_id: u8,
    pub frame_index: u32,
    pub features: FeatureVector,
    pub bmi: f64,
}

/// The `features.csv` table: one row per frame, all sharing one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub mask: FeatureMask,
    pub rows: Vec<FeatureRow>,
}

const KEY_COLUMNS: [&str; 3] = ["subject_id", "posture_id", "frame_index"];

fn header() -> Vec<String> {
    KEY_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..FEATURE_COUNT).map(|i| format!("f{i}")))
        .chain(std::iter::once("bmi".to_string()))
        .collect()
}

impl FeatureTable {
    pub fn from_corpus(corpus: &Corpus, exec: Execution) -> Self {
        let features = extract_batch(&corpus.frames, corpus.feature_mask, exec);
        let rows = corpus
            .frames
            .iter()
            .zip(features)
            .map(|(frame, features)| FeatureRow {
                subject_id: frame.subject_id.clone(),
                posture_id: frame.posture_id,
                frame_index: frame.frame_index,
                features,
                bmi: corpus
                    .subject(&frame.subject_id)
                    .expect("corpus frames reference known subjects")
                    .bmi,
            })
            .collect();
        FeatureTable {
            mask: corpus.feature_mask,
            rows,
        }
    }

    /// Sorted, de-duplicated subject ids.
    pub fn subject_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.rows.iter().map(|r| r.subject_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Same rows under a different mask.
    pub fn remasked(&self, mask: FeatureMask) -> Self {
        FeatureTable {
            mask,
            rows: self
                .rows
                .iter()
                .map(|r| FeatureRow {
                    features: r.features.masked(mask),
                    ..r.clone()
                })
                .collect(),
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header())?;
        for r in &self.rows {
            let mut rec = vec![
                r.subject_id.clone(),
                r.posture_id.to_string(),
                r.frame_index.to_string(),
            ];
            rec.extend(
                r.features
                    .slots()
                    .iter()
                    .map(|v| v.map(|v| v.to_string()).unwrap_or_default()),
            );
            rec.push(r.bmi.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `features.csv`. The mask is recovered from which columns are
    /// filled; every row must agree on it.
    pub fn read_csv(path: &Path) -> Result<Self, FeatureError> {
        let parse_err = |line: u64, message: String| FeatureError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(source) => FeatureError::Io {
                    path: path.to_path_buf(),
                    source,
                },
                kind => parse_err(1, format!("{kind:?}")),
            })?;
        let found = reader
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        let expected = header();
        if found.len() != expected.len() || found.iter().zip(&expected).any(|(a, b)| a.trim() != b)
        {
            return Err(parse_err(
                1,
                "expected header subject_id,posture_id,frame_index,f0..f13,bmi".into(),
            ));
        }
        let mut mask: Option<FeatureMask> = None;
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                parse_err(line, e.to_string())
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let num = |i: usize| -> Result<f64, FeatureError> {
                record[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(line, format!("column {}: {e}", expected[i])))
            };
            let posture_id = record[1]
                .trim()
                .parse::<u8>()
                .map_err(|e| parse_err(line, format!("posture_id: {e}")))?;
            let frame_index = record[2]
                .trim()
                .parse::<u32>()
                .map_err(|e| parse_err(line, format!("frame_index: {e}")))?;
            let mut bits = [false; FEATURE_COUNT];
            let mut values = [0.0; FEATURE_COUNT];
            for i in 0..FEATURE_COUNT {
                if !record[3 + i].trim().is_empty() {
                    bits[i] = true;
                    values[i] = num(3 + i)?;
                    if !values[i].is_finite() {
                        return Err(parse_err(line, format!("f{i} is not finite")));
                    }
                }
            }
            let row_mask = FeatureMask::from_bits(bits);
            match mask {
                None => mask = Some(row_mask),
                Some(m) if m != row_mask => {
                    return Err(parse_err(line, "feature mask differs from earlier rows".into()))
                }
                _ => {}
            }
            rows.push(FeatureRow {
                subject_id: record[0].trim().to_string(),
                posture_id,
                frame_index,
                features: FeatureVector::new(values, row_mask),
                bmi: num(3 + FEATURE_COUNT)?,
            });
        }
        Ok(FeatureTable {
            mask: mask.unwrap_or_default(),
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Feature;

    fn table() -> FeatureTable {
        let mask = FeatureMask::all().without(Feature::Max).without(Feature::Range);
        let rows = (0..3)
            .map(|i| FeatureRow {
                subject_id: format!("S{i}"),
                posture_id: 1,
                frame_index: i,
                features: FeatureVector::new(
                    std::array::from_fn(|k| k as f64 + 0.1 * i as f64),
                    mask,
                ),
                bmi: 20.0 + i as f64 / 3.0,
            })
            .collect();
        FeatureTable { mask, rows }
    }

    #[test]
    fn csv_round_trip_keeps_mask() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("features.csv");
        let t = table();
        t.write_csv(std::fs::File::create(&p).unwrap()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("subject_id,posture_id,frame_index,f0,f1,"));
        assert!(text.lines().nth(1).unwrap().starts_with("S0,1,0,,1,,3,"));
        let back = FeatureTable::read_csv(&p).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn inconsistent_mask_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("features.csv");
        table().write_csv(std::fs::File::create(&p).unwrap()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let broken = text.replacen("S1,1,1,,", "S1,1,1,7,", 1);
        std::fs::write(&p, broken).unwrap();
        let err = FeatureTable::read_csv(&p).unwrap_err();
        assert!(matches!(err, FeatureError::Parse { line: 3, .. }), "{err}");
    }
}
