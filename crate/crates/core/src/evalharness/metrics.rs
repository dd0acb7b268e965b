use serde::{Deserialize, Serialize};

use super::EvalError;

fn check(pred_len: usize, truth_len: usize) -> Result<(), EvalError> {
    if truth_len == 0 {
        return Err(EvalError::EmptyInput);
    }
    if pred_len != truth_len {
        return Err(EvalError::LengthMismatch {
            pred: pred_len,
            truth: truth_len,
        });
    }
    Ok(())
}

/// Coefficient of determination, 1 − SS_res / SS_tot.
pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check(pred.len(), truth.len())?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ConstantTruth);
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check(pred.len(), truth.len())?;
    let mse = pred.iter().zip(truth).map(|(p, t)| (t - p) * (t - p)).sum::<f64>() / truth.len() as f64;
    Ok(mse.sqrt())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64, EvalError> {
    check(pred.len(), truth.len())?;
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64)
}

/// Rows are true classes, columns predicted classes.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Vec<Vec<u64>>, EvalError> {
    check(pred.len(), truth.len())?;
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        let out = p.max(t);
        if out >= n_classes {
            return Err(EvalError::ClassOutOfRange { class: out, n_classes });
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Per-class precision, recall and F1 with their macro averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<u64>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassificationMetrics {
    /// A class with no predicted positives has precision 0; one with no
    /// true members has recall 0; F1 is 0 when P + R = 0.
    pub fn compute(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Self, EvalError> {
        let confusion = confusion_matrix(pred, truth, n_classes)?;
        let mut precision = Vec::with_capacity(n_classes);
        let mut recall = Vec::with_capacity(n_classes);
        let mut f1 = Vec::with_capacity(n_classes);
        for c in 0..n_classes {
            let tp = confusion[c][c];
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            let actual: u64 = confusion[c].iter().sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, actual);
            precision.push(p);
            recall.push(r);
            f1.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        Ok(ClassificationMetrics {
            accuracy: accuracy(pred, truth)?,
            macro_precision: mean(&precision),
            macro_recall: mean(&recall),
            macro_f1: mean(&f1),
            precision,
            recall,
            f1,
            confusion,
        })
    }
}

/// Mean and sample (n − 1) standard deviation; std is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
