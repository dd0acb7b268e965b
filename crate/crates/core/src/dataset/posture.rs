use std::path::Path;

use super::DatasetError;

const DEFAULT_TABLE: &str = include_str!("../../config/pmatdata_postures.csv");

pub const RAW_POSTURES: usize = 17;
pub const POSTURE_GROUPS: u8 = 10;

/// Raw PmatData posture id (1..=17) to posture group (1..=10).
///
/// The shipped table lives in `config/pmatdata_postures.csv`; any file with
/// the same `raw_id,group_id,description` layout can replace it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostureMap {
    groups: [u8; RAW_POSTURES],
}

impl PostureMap {
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut groups = [0u8; RAW_POSTURES];
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        for record in reader.records() {
            let record = record.map_err(|e| DatasetError::PostureMap(e.to_string()))?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let field = |i: usize| -> Result<i64, DatasetError> {
                record
                    .get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| DatasetError::PostureMap(format!("line {line}: bad column {i}")))
            };
            let raw = field(0)?;
            let group = field(1)?;
            if !(1..=RAW_POSTURES as i64).contains(&raw) {
                return Err(DatasetError::PostureOutOfRange(raw));
            }
            if !(1..=POSTURE_GROUPS as i64).contains(&group) {
                return Err(DatasetError::PostureMap(format!(
                    "line {line}: group {group} outside 1..={POSTURE_GROUPS}"
                )));
            }
            let slot = &mut groups[(raw - 1) as usize];
            if *slot != 0 {
                return Err(DatasetError::PostureMap(format!(
                    "line {line}: raw posture {raw} listed twice"
                )));
            }
            *slot = group as u8;
        }
        if let Some(missing) = groups.iter().position(|&g| g == 0) {
            return Err(DatasetError::PostureMap(format!(
                "raw posture {} has no group",
                missing + 1
            )));
        }
        for g in 1..=POSTURE_GROUPS {
            if !groups.contains(&g) {
                return Err(DatasetError::PostureMap(format!(
                    "group {g} has no raw posture"
                )));
            }
        }
        Ok(PostureMap { groups })
    }

    pub fn from_path(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn group(&self, raw_posture_id: i64) -> Result<u8, DatasetError> {
        if !(1..=RAW_POSTURES as i64).contains(&raw_posture_id) {
            return Err(DatasetError::PostureOutOfRange(raw_posture_id));
        }
        Ok(self.groups[(raw_posture_id - 1) as usize])
    }
}

impl Default for PostureMap {
    fn default() -> Self {
        Self::parse(DEFAULT_TABLE).expect("shipped posture table is valid")
    }
}

/// Maps a raw PmatData posture id onto its posture group using the shipped
/// table. Wedged postures share the group of their flat analog.
pub fn merge_postures(raw_posture_id: i64) -> Result<u8, DatasetError> {
    PostureMap::default().group(raw_posture_id)
}
