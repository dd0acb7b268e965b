use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::metrics::{r2, rmse, ClassificationMetrics};
use super::report::{EvaluationReport, FoldReport};
use super::{EvalError, FoldPlan};
use crate::baselines::{build_bmi_classes, BaselineError, BmiClassMode, GaussianNb, Knn, LinearRegression, Metric, BMI_CLASS_COUNT};
use crate::dataset::SubjectRecord;
use crate::exec::{self, Execution};
use crate::features::{FeatureRow, FeatureTable};
use crate::mtnet::{self, Normalizer, TrainConfig, TrainingSet};

/// A model and how it is trained inside a fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Recipe {
    /// Identity, BMI regression and (with classes) the BMI-class head.
    Mtnet(TrainConfig),
    /// Identity and BMI classes on z-scored features.
    Knn { k: usize, metric: Metric },
    /// Identity and BMI classes.
    Gnb,
    /// BMI regression only.
    Linreg,
}

impl Recipe {
    pub fn name(&self) -> &'static str {
        match self {
            Recipe::Mtnet(_) => "mtnet",
            Recipe::Knn { .. } => "knn",
            Recipe::Gnb => "gnb",
            Recipe::Linreg => "linreg",
        }
    }
}

/// How BMI classes are built inside each training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub mode: BmiClassMode,
    pub standardize: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub recipe: Recipe,
    pub n_folds: usize,
    pub seed: u64,
    /// `None` skips the BMI-class task.
    pub classes: Option<ClassSpec>,
}

/// Subject records for class construction. Without a subjects file only
/// BMI is known, which supports the `bmi` mode alone.
pub fn class_subjects(table: &FeatureTable, given: Option<&[SubjectRecord]>, mode: BmiClassMode) -> Result<Vec<SubjectRecord>, EvalError> {
    if let Some(s) = given {
        return Ok(s.to_vec());
    }
    if mode != BmiClassMode::Bmi {
        return Err(EvalError::NeedSubjects(mode));
    }
    let mut seen = BTreeMap::new();
    for r in &table.rows {
        seen.entry(r.subject_id.clone()).or_insert(r.bmi);
    }
    seen.into_iter()
        // Height 1 m makes weight numerically equal to BMI.
        .map(|(id, bmi)| SubjectRecord::new(id, 1.0, bmi, None).map_err(|e| EvalError::Recipe(e.to_string())))
        .collect()
}

struct FoldOutcome {
    metrics: BTreeMap<String, f64>,
    identity: Option<ClassificationMetrics>,
    bmi_class: Option<ClassificationMetrics>,
}

fn rows_matrix(rows: &[&FeatureRow], width: usize) -> Array2<f64> {
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.features.model_input()).collect();
    Array2::from_shape_vec((rows.len(), width), flat).expect("consistent mask")
}

fn put_class_metrics(out: &mut BTreeMap<String, f64>, prefix: &str, m: &ClassificationMetrics) {
    out.insert(format!("{prefix}_accuracy"), m.accuracy);
    out.insert(format!("{prefix}_macro_precision"), m.macro_precision);
    out.insert(format!("{prefix}_macro_recall"), m.macro_recall);
    out.insert(format!("{prefix}_macro_f1"), m.macro_f1);
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    table: &FeatureTable,
    subjects: Option<&[SubjectRecord]>,
    subject_ids: &[String],
    plan: &FoldPlan,
    fold: usize,
    cfg: &CvConfig,
    exec: Execution,
) -> Result<FoldOutcome, EvalError> {
    let train: Vec<&FeatureRow> = plan.train_indices(fold).into_iter().map(|i| &table.rows[i]).collect();
    let test: Vec<&FeatureRow> = plan.test_indices(fold).into_iter().map(|i| &table.rows[i]).collect();
    let width = table.mask.count();
    let id_index: BTreeMap<&str, usize> = subject_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let ids = |rows: &[&FeatureRow]| -> Vec<usize> { rows.iter().map(|r| id_index[r.subject_id.as_str()]).collect() };
    let bmis = |rows: &[&FeatureRow]| -> Vec<f64> { rows.iter().map(|r| r.bmi).collect() };

    // BMI classes from the subjects present in the training split.
    let classes = match &cfg.classes {
        None => None,
        Some(spec) => {
            let in_train: BTreeSet<&str> = train.iter().map(|r| r.subject_id.as_str()).collect();
            let records: Vec<SubjectRecord> = class_subjects(table, subjects, spec.mode)?
                .into_iter()
                .filter(|s| in_train.contains(s.subject_id.as_str()))
                .collect();
            let c = build_bmi_classes(&records, spec.mode, spec.standardize, spec.seed)?;
            let label = |rows: &[&FeatureRow]| -> Result<Vec<usize>, EvalError> {
                rows.iter()
                    .map(|r| c.class_of(&r.subject_id).ok_or_else(|| EvalError::UnknownSubject(r.subject_id.clone())))
                    .collect()
            };
            Some((label(&train)?, label(&test)?))
        }
    };

    let mut out = FoldOutcome {
        metrics: BTreeMap::new(),
        identity: None,
        bmi_class: None,
    };
    let (y_id_train, y_id_test) = (ids(&train), ids(&test));
    let (b_train, b_test) = (bmis(&train), bmis(&test));
    let n_subjects = subject_ids.len();

    match &cfg.recipe {
        Recipe::Mtnet(tc) => {
            let set = TrainingSet::from_rows(train.iter().copied(), table.mask, subject_ids)?;
            let (mut model, _) = mtnet::train(&set, tc, exec)?;
            let x_test = rows_matrix(&test, width);
            let (probs, bmi) = model.predict(x_test.view())?;
            let pred: Vec<usize> = probs.rows().into_iter().map(|r| mtnet::argmax(r.iter().copied())).collect();
            out.identity = Some(ClassificationMetrics::compute(&pred, &y_id_test, n_subjects)?);
            let bmi = bmi.to_vec();
            out.metrics.insert("bmi_r2".into(), r2(&bmi, &b_test)?);
            out.metrics.insert("bmi_rmse".into(), rmse(&bmi, &b_test)?);
            if let Some((c_train, c_test)) = &classes {
                model.fit_bmi_class_head(set.inputs.view(), c_train)?;
                let pred = model.predict_bmi_classes(x_test.view())?;
                out.bmi_class = Some(ClassificationMetrics::compute(&pred, c_test, BMI_CLASS_COUNT)?);
            }
        }
        Recipe::Knn { k, metric } => {
            let x_train = rows_matrix(&train, width);
            let norm = Normalizer::fit(x_train.view());
            let z = |rows: &[&FeatureRow]| -> Vec<Vec<f64>> {
                rows.iter().map(|r| norm.normalize(&r.features.model_input())).collect()
            };
            let (z_train, z_test) = (z(&train), z(&test));
            let knn = Knn::fit(z_train.clone(), y_id_train, *k, *metric)?;
            let pred = knn.predict(&z_test, Execution::Sequential)?;
            out.identity = Some(ClassificationMetrics::compute(&pred, &y_id_test, n_subjects)?);
            if let Some((c_train, c_test)) = &classes {
                let knn = Knn::fit(z_train, c_train.clone(), *k, *metric)?;
                let pred = knn.predict(&z_test, Execution::Sequential)?;
                out.bmi_class = Some(ClassificationMetrics::compute(&pred, c_test, BMI_CLASS_COUNT)?);
            }
        }
        Recipe::Gnb => {
            let x = |rows: &[&FeatureRow]| -> Vec<Vec<f64>> { rows.iter().map(|r| r.features.model_input()).collect() };
            let (x_train, x_test) = (x(&train), x(&test));
            let nb = GaussianNb::fit(&x_train, &y_id_train, n_subjects)?;
            out.identity = Some(ClassificationMetrics::compute(&nb.predict(&x_test)?, &y_id_test, n_subjects)?);
            if let Some((c_train, c_test)) = &classes {
                let nb = GaussianNb::fit(&x_train, c_train, BMI_CLASS_COUNT)?;
                out.bmi_class = Some(ClassificationMetrics::compute(&nb.predict(&x_test)?, c_test, BMI_CLASS_COUNT)?);
            }
        }
        Recipe::Linreg => {
            let x = |rows: &[&FeatureRow]| -> Vec<Vec<f64>> { rows.iter().map(|r| r.features.model_input()).collect() };
            let lr = LinearRegression::fit(&x(&train), &b_train)?;
            let pred = lr.predict(&x(&test));
            out.metrics.insert("bmi_r2".into(), r2(&pred, &b_test)?);
            out.metrics.insert("bmi_rmse".into(), rmse(&pred, &b_test)?);
        }
    }
    if let Some(m) = &out.identity {
        put_class_metrics(&mut out.metrics, "identity", m);
    }
    if let Some(m) = &out.bmi_class {
        put_class_metrics(&mut out.metrics, "bmi_class", m);
    }
    Ok(out)
}

/// Cross-validates `cfg.recipe` on `table`. Folds may run in parallel;
/// the report is assembled in fold order, so it does not depend on the
/// execution strategy. One failed fold is recorded; two or more abort.
pub fn run_cv(
    table: &FeatureTable,
    subjects: Option<&[SubjectRecord]>,
    cfg: &CvConfig,
    exec: Execution,
) -> Result<EvaluationReport, EvalError> {
    let frame_subjects: Vec<&str> = table.rows.iter().map(|r| r.subject_id.as_str()).collect();
    let plan = FoldPlan::new(&frame_subjects, cfg.n_folds, cfg.seed)?;
    run_cv_with_plan(table, subjects, cfg, &plan, exec)
}

pub fn run_cv_with_plan(
    table: &FeatureTable,
    subjects: Option<&[SubjectRecord]>,
    cfg: &CvConfig,
    plan: &FoldPlan,
    exec: Execution,
) -> Result<EvaluationReport, EvalError> {
    if plan.assignment.len() != table.rows.len() {
        return Err(EvalError::LengthMismatch {
            pred: plan.assignment.len(),
            truth: table.rows.len(),
        });
    }
    let subject_ids = table.subject_ids();
    // Configuration problems would fail every fold identically; report them once.
    if let Some(spec) = &cfg.classes {
        let records = class_subjects(table, subjects, spec.mode)?;
        if let Some(missing) = subject_ids.iter().find(|id| !records.iter().any(|r| &r.subject_id == *id)) {
            return Err(EvalError::UnknownSubject(missing.clone()));
        }
        let no_age: Vec<String> = records
            .iter()
            .filter(|r| r.age_years.is_none() && subject_ids.contains(&r.subject_id))
            .map(|r| r.subject_id.clone())
            .collect();
        if spec.mode == BmiClassMode::AgeBmi && !no_age.is_empty() {
            return Err(BaselineError::MissingAge(no_age).into());
        }
    }
    let outcomes = exec::map_range(exec, plan.n_folds, |fold| {
        run_fold(table, subjects, &subject_ids, plan, fold, cfg, exec)
    });
    let mut per_fold = Vec::with_capacity(plan.n_folds);
    let mut failed = Vec::new();
    for (fold, outcome) in outcomes.into_iter().enumerate() {
        let n_test = plan.test_indices(fold).len();
        let n_train = plan.assignment.len() - n_test;
        match outcome {
            Ok(o) => per_fold.push(FoldReport {
                fold,
                status: "ok".into(),
                error: None,
                n_train,
                n_test,
                metrics: o.metrics,
                identity: o.identity,
                bmi_class: o.bmi_class,
            }),
            Err(e) => {
                log::warn!("fold {fold} failed: {e}");
                failed.push((fold, e.to_string()));
                per_fold.push(FoldReport {
                    fold,
                    status: "failed".into(),
                    error: Some(e.to_string()),
                    n_train,
                    n_test,
                    metrics: BTreeMap::new(),
                    identity: None,
                    bmi_class: None,
                });
            }
        }
    }
    if failed.len() >= 2 {
        return Err(EvalError::TooManyFailedFolds {
            folds: failed.iter().map(|f| f.0).collect(),
            first: failed[0].1.clone(),
        });
    }
    let config_echo = serde_json::json!({
        "recipe": cfg.recipe,
        "n_folds": cfg.n_folds,
        "seed": cfg.seed,
        "classes": cfg.classes,
        "feature_mask": table.mask.bits(),
        "n_frames": table.rows.len(),
        "subjects": subject_ids,
    });
    Ok(EvaluationReport::assemble(config_echo, per_fold))
}

/// Change in a metric when one feature is removed (full − without).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub delta: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub config_echo: serde_json::Value,
    pub baseline: BTreeMap<String, f64>,
    pub features: Vec<FeatureImportance>,
}

/// Metrics compared by drop-column importance.
pub const IMPORTANCE_METRICS: [&str; 2] = ["identity_accuracy", "bmi_r2"];

/// Re-runs cross-validation once per active feature with that feature
/// removed, on the same fold plan.
pub fn drop_column_importance(
    table: &FeatureTable,
    subjects: Option<&[SubjectRecord]>,
    cfg: &CvConfig,
    exec: Execution,
) -> Result<ImportanceReport, EvalError> {
    let frame_subjects: Vec<&str> = table.rows.iter().map(|r| r.subject_id.as_str()).collect();
    let plan = FoldPlan::new(&frame_subjects, cfg.n_folds, cfg.seed)?;
    let full = run_cv_with_plan(table, subjects, cfg, &plan, exec)?;
    let pick = |r: &EvaluationReport| -> BTreeMap<String, f64> {
        IMPORTANCE_METRICS
            .iter()
            .filter_map(|k| r.aggregate.mean.get(*k).map(|v| (k.to_string(), *v)))
            .collect()
    };
    let baseline = pick(&full);
    let mut features = Vec::new();
    for f in table.mask.active().collect::<Vec<_>>() {
        let reduced = table.remasked(table.mask.without(f));
        let report = run_cv_with_plan(&reduced, subjects, cfg, &plan, exec)?;
        let without = pick(&report);
        features.push(FeatureImportance {
            feature: f.name().to_string(),
            delta: baseline
                .iter()
                .filter_map(|(k, v)| without.get(k).map(|w| (k.clone(), v - w)))
                .collect(),
        });
        log::info!("importance of {f}: {:?}", features.last().map(|x| &x.delta));
    }
    Ok(ImportanceReport {
        config_echo: full.config_echo.clone(),
        baseline,
        features,
    })
}
