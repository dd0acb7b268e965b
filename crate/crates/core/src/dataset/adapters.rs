//! Converters from raw dataset downloads into the canonical corpus.
//!
//! Neither raw distribution ships anthropometrics in a machine-readable
//! form next to the frames, so both adapters expect a `subjects.csv` in the
//! raw directory with header `subject_id,height_cm,weight_kg,age_years`.
//!
//! PmatData: `experiment-i/S<n>/<raw_posture>.txt` (the `experiment-i`
//! level is optional), one frame per line as 2048 whitespace-separated
//! readings. Raw posture ids 1..=17 are merged into 10 groups with a
//! [`PostureMap`].
//!
//! HRL-ROS: `<subject_id>/<recording>.txt` with one frame per line as 1728
//! whitespace- or comma-separated readings. Each file becomes one posture
//! id, numbered by file name order.
//!
//! Readings are clamped into `[0, sensor_ceiling]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::io::read_subjects_cm;
use super::{Corpus, DatasetError, GridSpec, PostureMap, PressureFrame, SubjectRecord};
use crate::features::{Feature, FeatureMask};

/// Anthropometrics read from a raw directory's `subjects.csv`.
#[derive(Debug, Clone)]
pub struct RawSubjectTable(pub Vec<SubjectRecord>);

impl RawSubjectTable {
    pub fn load(raw_root: &Path) -> Result<Self, DatasetError> {
        read_subjects_cm(&raw_root.join("subjects.csv")).map(RawSubjectTable)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| io_err(dir, err)))
        .collect::<Result<Vec<_>, _>>()?;
    entries.sort();
    Ok(entries)
}

fn read_frame_lines(path: &Path, grid: GridSpec) -> Result<Vec<Vec<f64>>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>().map_err(|e| DatasetError::Parse {
                    path: path.to_path_buf(),
                    line: i as u64 + 1,
                    message: format!("{s:?}: {e}"),
                })
            })
            .map(|v| v.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, grid.sensor_ceiling) }))
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != grid.cells() {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message: format!("{} readings, expected {}", values.len(), grid.cells()),
            });
        }
        frames.push(values);
    }
    Ok(frames)
}

fn file_stem_number(path: &Path) -> Option<i64> {
    path.file_stem()?.to_str()?.trim().parse().ok()
}

/// Subject directory `S3` and subject table id `S03` refer to the same person.
fn match_subject<'a>(subjects: &'a [SubjectRecord], dir_name: &str) -> Option<&'a SubjectRecord> {
    let digits = |s: &str| -> Option<u32> {
        s.trim_start_matches(|c: char| !c.is_ascii_digit()).parse().ok()
    };
    subjects
        .iter()
        .find(|s| s.subject_id == dir_name)
        .or_else(|| {
            let n = digits(dir_name)?;
            subjects.iter().find(|s| digits(&s.subject_id) == Some(n))
        })
}

pub fn ingest_pmatdata(raw_root: &Path, postures: &PostureMap) -> Result<Corpus, DatasetError> {
    let grid = GridSpec::pmatdata();
    let subjects = RawSubjectTable::load(raw_root)?.0;
    let base = if raw_root.join("experiment-i").is_dir() {
        raw_root.join("experiment-i")
    } else {
        raw_root.to_path_buf()
    };
    let mut frames = Vec::new();
    for subject_dir in sorted_entries(&base)?.into_iter().filter(|p| p.is_dir()) {
        let dir_name = subject_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let subject = match_subject(&subjects, &dir_name).ok_or_else(|| {
            DatasetError::UnknownSubject(format!("{dir_name} (no row in subjects.csv)"))
        })?;
        let mut recordings: Vec<(i64, PathBuf)> = sorted_entries(&subject_dir)?
            .into_iter()
            .filter_map(|p| file_stem_number(&p).map(|n| (n, p)))
            .collect();
        recordings.sort();
        let mut next_index: BTreeMap<u8, u32> = BTreeMap::new();
        for (raw_id, path) in recordings {
            let group = postures.group(raw_id)?;
            for values in read_frame_lines(&path, grid)? {
                let index = next_index.entry(group).or_insert(0);
                frames.push(PressureFrame::new(
                    grid,
                    values,
                    subject.subject_id.clone(),
                    group,
                    *index,
                )?);
                *index += 1;
            }
        }
    }
    Corpus::new("pmatdata", grid, subjects, frames, FeatureMask::all())
}

pub fn ingest_hrlros(raw_root: &Path) -> Result<Corpus, DatasetError> {
    let grid = GridSpec::hrlros();
    let subjects = RawSubjectTable::load(raw_root)?.0;
    let mut frames = Vec::new();
    for subject_dir in sorted_entries(raw_root)?.into_iter().filter(|p| p.is_dir()) {
        let dir_name = subject_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let subject = match_subject(&subjects, &dir_name).ok_or_else(|| {
            DatasetError::UnknownSubject(format!("{dir_name} (no row in subjects.csv)"))
        })?;
        let recordings: Vec<PathBuf> = sorted_entries(&subject_dir)?
            .into_iter()
            .filter(|p| p.is_file())
            .collect();
        for (ordinal, path) in recordings.iter().enumerate() {
            let posture = u8::try_from(ordinal + 1).map_err(|_| DatasetError::Format {
                path: subject_dir.clone(),
                message: "more than 255 recordings".into(),
            })?;
            for (index, values) in read_frame_lines(path, grid)?.into_iter().enumerate() {
                frames.push(PressureFrame::new(
                    grid,
                    values,
                    subject.subject_id.clone(),
                    posture,
                    index as u32,
                )?);
            }
        }
    }
    let mask = FeatureMask::all().without(Feature::Max).without(Feature::Range);
    Corpus::new("hrl-ros", grid, subjects, frames, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_line(values: &[f64]) -> String {
        values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ") + "\n"
    }

    #[test]
    fn pmatdata_layout_merges_wedges() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::write(
            root.join("subjects.csv"),
            "subject_id,height_cm,weight_kg,age_years\nS1,175,70,30\n",
        )
        .unwrap();
        let sdir = root.join("experiment-i").join("S1");
        fs::create_dir_all(&sdir).unwrap();
        let mut frame = vec![0.0; 2048];
        frame[100] = 1500.0;
        fs::write(sdir.join("1.txt"), write_line(&frame) + &write_line(&frame)).unwrap();
        fs::write(sdir.join("16.txt"), write_line(&frame)).unwrap();
        fs::write(sdir.join("2.txt"), write_line(&frame)).unwrap();

        let c = ingest_pmatdata(root, &PostureMap::default()).unwrap();
        assert_eq!(c.frames.len(), 4);
        let keys: Vec<_> = c.frames.iter().map(|f| (f.posture_id, f.frame_index)).collect();
        assert_eq!(keys, vec![(1, 0), (1, 1), (1, 2), (2, 0)]);
        assert_eq!(c.frames[0].values[100], 1000.0);
        assert!((c.subjects[0].height_m - 1.75).abs() < 1e-12);
    }

    #[test]
    fn hrlros_layout_and_mask() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::write(
            root.join("subjects.csv"),
            "subject_id,height_cm,weight_kg,age_years\nsubject_4,170,60,\n",
        )
        .unwrap();
        let sdir = root.join("subject_4");
        fs::create_dir_all(&sdir).unwrap();
        let frame = vec![3.0; 1728];
        fs::write(sdir.join("a.txt"), write_line(&frame)).unwrap();
        fs::write(sdir.join("b.txt"), write_line(&frame).replace(' ', ",")).unwrap();
        let c = ingest_hrlros(root).unwrap();
        assert_eq!(c.frames.len(), 2);
        assert_eq!(c.feature_mask.count(), 12);
        assert!(!c.feature_mask.contains(Feature::Max));
        assert_eq!(c.frames[1].posture_id, 2);
    }

    #[test]
    fn wrong_width_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::write(
            root.join("subjects.csv"),
            "subject_id,height_cm,weight_kg,age_years\nS1,175,70,30\n",
        )
        .unwrap();
        let sdir = root.join("S1");
        fs::create_dir_all(&sdir).unwrap();
        fs::write(sdir.join("1.txt"), "1 2 3\n").unwrap();
        let err = ingest_pmatdata(root, &PostureMap::default()).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 1, .. }), "{err}");
    }
}
