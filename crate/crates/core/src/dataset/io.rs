use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, DatasetError, GridSpec, PressureFrame, SubjectRecord};
use crate::features::{FeatureMask, FEATURE_COUNT};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUBJECTS_FILE: &str = "subjects.csv";
pub const FRAMES_FILE: &str = "frames.csv";

const SUBJECT_HEADER: [&str; 4] = ["subject_id", "height_m", "weight_kg", "age_years"];
const FRAME_KEY_COLUMNS: [&str; 3] = ["subject_id", "posture_id", "frame_index"];

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    name: String,
    rows: usize,
    cols: usize,
    sensor_ceiling: f64,
    frame_rate_hz: f64,
    feature_mask: [bool; FEATURE_COUNT],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: u64, message: impl ToString) -> DatasetError {
    DatasetError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

fn csv_err(path: &Path, err: csv::Error) -> DatasetError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(source) => DatasetError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    column: &str,
    raw: &str,
) -> Result<T, DatasetError>
where
    T::Err: std::fmt::Display,
{
    raw.trim()
        .parse::<T>()
        .map_err(|e| parse_err(path, line, format!("column {column}: {raw:?}: {e}")))
}

/// Reads and validates a corpus directory.
pub fn load_corpus(root: impl AsRef<Path>) -> Result<Corpus, DatasetError> {
    let root = root.as_ref();
    let manifest_path = root.join(MANIFEST_FILE);
    let manifest_text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest =
        serde_json::from_str(&manifest_text).map_err(|e| DatasetError::Format {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
    let grid = GridSpec::new(
        manifest.rows,
        manifest.cols,
        manifest.sensor_ceiling,
        manifest.frame_rate_hz,
    )
    .map_err(|e| DatasetError::Format {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let mask = FeatureMask::from_bits(manifest.feature_mask);

    let subjects = read_subjects(&root.join(SUBJECTS_FILE))?;
    let frames = read_frames(&root.join(FRAMES_FILE), grid, &subjects)?;

    let mut corpus =
        Corpus::new(manifest.name, grid, subjects, frames, mask).map_err(|e| match e {
            e @ (DatasetError::DuplicateSubject(_) | DatasetError::MaskTooSparse(_)) => {
                DatasetError::Format {
                    path: root.to_path_buf(),
                    message: e.to_string(),
                }
            }
            other => other,
        })?;
    corpus.provenance = manifest.provenance;
    Ok(corpus)
}

/// Reads a canonical `subjects.csv`.
pub fn read_subjects(path: &Path) -> Result<Vec<SubjectRecord>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().map(str::trim).ne(SUBJECT_HEADER) {
        return Err(parse_err(
            path,
            1,
            format!("expected header {}", SUBJECT_HEADER.join(",")),
        ));
    }
    let mut subjects: Vec<SubjectRecord> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id = record[0].trim().to_string();
        if id.is_empty() {
            return Err(parse_err(path, line, "empty subject_id"));
        }
        let height: f64 = parse_field(path, line, "height_m", &record[1])?;
        let weight: f64 = parse_field(path, line, "weight_kg", &record[2])?;
        let age = match record[3].trim() {
            "" => None,
            raw => Some(parse_field::<f64>(path, line, "age_years", raw)?),
        };
        if subjects.iter().any(|s| s.subject_id == id) {
            return Err(parse_err(path, line, format!("duplicate subject {id:?}")));
        }
        let subject = SubjectRecord::new(id, height, weight, age)
            .map_err(|e| parse_err(path, line, e))?;
        subjects.push(subject);
    }
    Ok(subjects)
}

/// Reads a raw-dataset subject table with height in centimeters.
pub(super) fn read_subjects_cm(path: &Path) -> Result<Vec<SubjectRecord>, DatasetError> {
    const HEADER: [&str; 4] = ["subject_id", "height_cm", "weight_kg", "age_years"];
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(parse_err(path, 1, format!("expected header {}", HEADER.join(","))));
    }
    let mut subjects = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let height_cm: f64 = parse_field(path, line, "height_cm", &record[1])?;
        let weight: f64 = parse_field(path, line, "weight_kg", &record[2])?;
        let age = match record[3].trim() {
            "" => None,
            raw => Some(parse_field::<f64>(path, line, "age_years", raw)?),
        };
        let subject = SubjectRecord::new(record[0].trim(), height_cm / 100.0, weight, age)
            .map_err(|e| parse_err(path, line, e))?;
        subjects.push(subject);
    }
    Ok(subjects)
}

fn read_frames(
    path: &Path,
    grid: GridSpec,
    subjects: &[SubjectRecord],
) -> Result<Vec<PressureFrame>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let expected_header = frame_header(grid.cells());
    if header.len() != expected_header.len()
        || header.iter().zip(&expected_header).any(|(a, b)| a.trim() != b)
    {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header subject_id,posture_id,frame_index,v0..v{}",
                grid.cells() - 1
            ),
        ));
    }
    let mut frames = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let subject_id = record[0].trim().to_string();
        if !subjects.iter().any(|s| s.subject_id == subject_id) {
            return Err(parse_err(
                path,
                line,
                format!("unknown subject_id {subject_id:?}"),
            ));
        }
        let posture_id: u8 = parse_field(path, line, "posture_id", &record[1])?;
        let frame_index: u32 = parse_field(path, line, "frame_index", &record[2])?;
        let mut values = Vec::with_capacity(grid.cells());
        for (i, raw) in record.iter().skip(FRAME_KEY_COLUMNS.len()).enumerate() {
            let v: f64 = parse_field(path, line, &format!("v{i}"), raw)?;
            values.push(v);
        }
        let frame = PressureFrame::new(grid, values, subject_id, posture_id, frame_index)
            .map_err(|e| parse_err(path, line, e))?;
        frames.push(frame);
    }
    Ok(frames)
}

fn frame_header(cells: usize) -> Vec<String> {
    FRAME_KEY_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..cells).map(|i| format!("v{i}")))
        .collect()
}

/// Writes `corpus` under `root`, creating the directory if needed.
///
/// Floats are written in shortest round-trip form so that loading the
/// result reproduces the corpus bit for bit.
pub fn save_corpus(corpus: &Corpus, root: impl AsRef<Path>) -> Result<(), DatasetError> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(io_err(root))?;

    let manifest = Manifest {
        name: corpus.name.clone(),
        rows: corpus.grid.rows,
        cols: corpus.grid.cols,
        sensor_ceiling: corpus.grid.sensor_ceiling,
        frame_rate_hz: corpus.grid.frame_rate_hz,
        feature_mask: corpus.feature_mask.bits(),
        provenance: corpus.provenance.clone(),
    };
    let manifest_path = root.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;

    let subjects_path = root.join(SUBJECTS_FILE);
    let mut w = csv_writer(&subjects_path)?;
    w.write_record(SUBJECT_HEADER)
        .map_err(|e| csv_err(&subjects_path, e))?;
    for s in &corpus.subjects {
        let age = s.age_years.map(|a| a.to_string()).unwrap_or_default();
        w.write_record([
            s.subject_id.as_str(),
            &s.height_m.to_string(),
            &s.weight_kg.to_string(),
            &age,
        ])
        .map_err(|e| csv_err(&subjects_path, e))?;
    }
    w.flush().map_err(io_err(&subjects_path))?;

    let frames_path = root.join(FRAMES_FILE);
    let mut w = csv_writer(&frames_path)?;
    w.write_record(frame_header(corpus.grid.cells()))
        .map_err(|e| csv_err(&frames_path, e))?;
    let mut row: Vec<String> = Vec::with_capacity(corpus.grid.cells() + 3);
    for f in &corpus.frames {
        row.clear();
        row.push(f.subject_id.clone());
        row.push(f.posture_id.to_string());
        row.push(f.frame_index.to_string());
        row.extend(f.values.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| csv_err(&frames_path, e))?;
    }
    w.flush().map_err(io_err(&frames_path))?;
    Ok(())
}

fn csv_writer(path: &PathBuf) -> Result<csv::Writer<fs::File>, DatasetError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}
