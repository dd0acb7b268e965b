use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{mean_std, ClassificationMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    /// "ok" or "failed".
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<ClassificationMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bmi_class: Option<ClassificationMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: BTreeMap<String, f64>,
    /// Sample (n − 1) standard deviation over successful folds.
    pub std: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_echo: serde_json::Value,
    pub per_fold: Vec<FoldReport>,
    pub aggregate: Aggregate,
}

impl EvaluationReport {
    pub fn assemble(config_echo: serde_json::Value, per_fold: Vec<FoldReport>) -> Self {
        let keys: BTreeSet<&String> = per_fold.iter().flat_map(|f| f.metrics.keys()).collect();
        let mut mean = BTreeMap::new();
        let mut std = BTreeMap::new();
        for k in keys {
            let values: Vec<f64> = per_fold.iter().filter_map(|f| f.metrics.get(k).copied()).collect();
            let (m, s) = mean_std(&values);
            mean.insert(k.clone(), m);
            std.insert(k.clone(), s);
        }
        EvaluationReport {
            config_echo,
            per_fold,
            aggregate: Aggregate { mean, std },
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn metric_keys(&self) -> Vec<String> {
        self.aggregate.mean.keys().cloned().collect()
    }

    /// One row per fold: fold, status, n_train, n_test, then every metric.
    pub fn to_csv(&self) -> String {
        let keys = self.metric_keys();
        let mut out = String::from("fold,status,n_train,n_test");
        for k in &keys {
            write!(out, ",{k}").unwrap();
        }
        out.push('\n');
        for f in &self.per_fold {
            write!(out, "{},{},{},{}", f.fold, f.status, f.n_train, f.n_test).unwrap();
            for k in &keys {
                match f.metrics.get(k) {
                    Some(v) => write!(out, ",{v}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Aggregate table (mean ± std, percentages for rates) followed by
    /// per-class precision/recall/F1 averaged over folds.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let recipe = self.config_echo.get("recipe").and_then(|r| r.get("model")).and_then(|m| m.as_str()).unwrap_or("?");
        let n_ok = self.per_fold.iter().filter(|f| f.status == "ok").count();
        writeln!(out, "recipe: {recipe}   folds: {n_ok}/{} ok", self.per_fold.len()).unwrap();
        writeln!(out).unwrap();
        writeln!(out, "{:<28} {:>20}", "Metric", "Mean ± Std").unwrap();
        for k in self.metric_keys() {
            let (m, s) = (self.aggregate.mean[&k], self.aggregate.std[&k]);
            let cell = if k.ends_with("rmse") {
                format!("{m:.3} ± {s:.3}")
            } else {
                format!("{:.1} ± {:.1}%", 100.0 * m, 100.0 * s)
            };
            writeln!(out, "{k:<28} {cell:>20}").unwrap();
        }
        let subjects: Vec<String> = self
            .config_echo
            .get("subjects")
            .and_then(|s| serde_json::from_value(s.clone()).ok())
            .unwrap_or_default();
        for (title, pick) in [
            ("Identity", (|f: &FoldReport| f.identity.as_ref()) as fn(&FoldReport) -> Option<&ClassificationMetrics>),
            ("BMI class", |f: &FoldReport| f.bmi_class.as_ref()),
        ] {
            let folds: Vec<&ClassificationMetrics> = self.per_fold.iter().filter_map(pick).collect();
            let Some(first) = folds.first() else { continue };
            writeln!(out).unwrap();
            writeln!(out, "{title:<12} {:>16} {:>16} {:>16}", "Precision", "Recall", "F1-Score").unwrap();
            for c in 0..first.precision.len() {
                let label = if title == "Identity" {
                    subjects.get(c).cloned().unwrap_or_else(|| c.to_string())
                } else {
                    format!("class {c}")
                };
                let cell = |v: Vec<f64>| {
                    let (m, s) = mean_std(&v);
                    format!("{:.1} ± {:.1}", 100.0 * m, 100.0 * s)
                };
                writeln!(
                    out,
                    "{label:<12} {:>16} {:>16} {:>16}",
                    cell(folds.iter().map(|f| f.precision[c]).collect()),
                    cell(folds.iter().map(|f| f.recall[c]).collect()),
                    cell(folds.iter().map(|f| f.f1[c]).collect()),
                )
                .unwrap();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fold(i: usize, acc: f64) -> FoldReport {
        FoldReport {
            fold: i,
            status: "ok".into(),
            error: None,
            n_train: 9,
            n_test: 1,
            metrics: BTreeMap::from([("identity_accuracy".to_string(), acc)]),
            identity: None,
            bmi_class: None,
        }
    }

    #[test]
    fn aggregate_mean_matches_folds() {
        let accs = [0.9, 0.95, 1.0, 0.85];
        let r = EvaluationReport::assemble(serde_json::json!({}), accs.iter().enumerate().map(|(i, &a)| fold(i, a)).collect());
        let mean = accs.iter().sum::<f64>() / 4.0;
        assert!((r.aggregate.mean["identity_accuracy"] - mean).abs() <= 1e-12);
        let back = EvaluationReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("fold,status,n_train,n_test,identity_accuracy\n0,ok,9,1,0.9\n"));
        assert!(r.to_text().contains("identity_accuracy"));
    }
}
