use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, KMeansConfig};
use super::BaselineError;
use crate::dataset::SubjectRecord;

pub const BMI_CLASS_COUNT: usize = 5;

/// Which subject attributes are clustered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BmiClassMode {
    Bmi,
    AgeBmi,
    WeightHeight,
}

impl FromStr for BmiClassMode {
    type Err = BaselineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bmi" => Ok(BmiClassMode::Bmi),
            "age_bmi" => Ok(BmiClassMode::AgeBmi),
            "weight_height" => Ok(BmiClassMode::WeightHeight),
            other => Err(BaselineError::Unknown {
                what: "BMI class mode",
                value: other.into(),
            }),
        }
    }
}

/// Subject → ordinal BMI class (0 = lowest mean BMI).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmiClasses {
    pub mode: BmiClassMode,
    pub classes: BTreeMap<String, usize>,
    /// Mean BMI of each class, ascending.
    pub class_mean_bmi: Vec<f64>,
}

impl BmiClasses {
    pub fn class_of(&self, subject_id: &str) -> Option<usize> {
        self.classes.get(subject_id).copied()
    }
}

/// Clusters subjects into five classes with k-means and relabels them in
/// ascending order of mean BMI.
pub fn build_bmi_classes(
    subjects: &[SubjectRecord],
    mode: BmiClassMode,
    standardize: bool,
    seed: u64,
) -> Result<BmiClasses, BaselineError> {
    let points: Vec<Vec<f64>> = match mode {
        BmiClassMode::Bmi => subjects.iter().map(|s| vec![s.bmi]).collect(),
        BmiClassMode::WeightHeight => subjects.iter().map(|s| vec![s.weight_kg, s.height_m]).collect(),
        BmiClassMode::AgeBmi => {
            let missing: Vec<String> = subjects
                .iter()
                .filter(|s| s.age_years.is_none())
                .map(|s| s.subject_id.clone())
                .collect();
            if !missing.is_empty() {
                return Err(BaselineError::MissingAge(missing));
            }
            subjects.iter().map(|s| vec![s.age_years.unwrap_or_default(), s.bmi]).collect()
        }
    };
    let k = BMI_CLASS_COUNT;
    let cfg = KMeansConfig {
        standardize,
        ..KMeansConfig::new(k, seed)
    };
    let result = kmeans(&points, &cfg)?;
    let mut sum = vec![0.0; k];
    let mut count = vec![0usize; k];
    for (s, &l) in subjects.iter().zip(&result.labels) {
        sum[l] += s.bmi;
        count[l] += 1;
    }
    let non_empty = count.iter().filter(|&&c| c > 0).count();
    if non_empty < k {
        return Err(BaselineError::InsufficientDiversity { non_empty, k });
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| mean[a].total_cmp(&mean[b]).then(a.cmp(&b)));
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    Ok(BmiClasses {
        mode,
        classes: subjects
            .iter()
            .zip(&result.labels)
            .map(|(s, &l)| (s.subject_id.clone(), rank[l]))
            .collect(),
        class_mean_bmi: order.iter().map(|&c| mean[c]).collect(),
    })
}
