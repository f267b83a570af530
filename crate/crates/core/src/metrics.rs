//! Evaluation metrics: classification accuracy, per-class IoU and end-point error.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{distance, Point3};

/// Absolute end-point-error threshold for an "accurate" estimate.
pub const EPE_ACC_ABS: f64 = 0.1;
/// Relative end-point-error threshold (fraction of the ground-truth flow norm).
pub const EPE_ACC_REL: f64 = 0.1;
/// End-point error above which an estimate is an outlier.
pub const EPE_OUTLIER: f64 = 1.0;

/// End-point-error statistics. Field order mirrors the usual flow benchmark columns:
/// mean EPE, its standard deviation, accuracy ratio and outlier ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpeReport {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Fraction with EPE below the absolute threshold or below the relative one.
    pub accuracy: f64,
    pub outliers: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpeThresholds {
    pub acc_abs: f64,
    pub acc_rel: f64,
    pub outlier: f64,
}

impl Default for EpeThresholds {
    fn default() -> Self {
        Self { acc_abs: EPE_ACC_ABS, acc_rel: EPE_ACC_REL, outlier: EPE_OUTLIER }
    }
}

pub fn epe_stats(pred: &[Point3], gt: &[Point3], th: &EpeThresholds) -> Result<EpeReport> {
    if pred.len() != gt.len() {
        return Err(Error::input(format!("{} predictions for {} ground-truth vectors", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::input("no flow vectors to evaluate"));
    }
    let n = pred.len() as f64;
    let epe: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| distance(p, g)).collect();
    let mean = epe.iter().sum::<f64>() / n;
    let var = epe.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    let zero = [0.0; 3];
    let accurate = epe
        .iter()
        .zip(gt)
        .filter(|(e, g)| **e < th.acc_abs || **e < th.acc_rel * distance(g, &zero))
        .count();
    let outliers = epe.iter().filter(|&&e| e > th.outlier).count();
    Ok(EpeReport { mean, std: var.sqrt(), accuracy: accurate as f64 / n, outliers: outliers as f64 / n })
}

/// How a class that appears in neither prediction nor ground truth is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmptyClass {
    /// IoU 0, and the class still counts toward the mean.
    #[default]
    Zero,
    /// Left out of the mean; its per-class entry is NaN.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IouReport {
    pub per_class: Vec<f64>,
    pub mean_iou: f64,
    /// Overall point accuracy.
    pub accuracy: f64,
}

pub fn confusion_matrix(pred: &[usize], gt: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if pred.len() != gt.len() {
        return Err(Error::input(format!("{} predictions for {} labels", pred.len(), gt.len())));
    }
    let mut m = vec![vec![0usize; classes]; classes];
    for (&p, &g) in pred.iter().zip(gt) {
        if p >= classes || g >= classes {
            return Err(Error::input(format!("label {} out of range for {classes} classes", p.max(g))));
        }
        m[g][p] += 1;
    }
    Ok(m)
}

pub fn iou_report(pred: &[usize], gt: &[usize], classes: usize, empty: EmptyClass) -> Result<IouReport> {
    if pred.is_empty() {
        return Err(Error::input("no labels to evaluate"));
    }
    let m = confusion_matrix(pred, gt, classes)?;
    let mut per_class = Vec::with_capacity(classes);
    let mut sum = 0.0;
    let mut counted = 0usize;
    for c in 0..classes {
        let tp = m[c][c];
        let fn_: usize = m[c].iter().sum::<usize>() - tp;
        let fp: usize = (0..classes).map(|g| m[g][c]).sum::<usize>() - tp;
        let union = tp + fp + fn_;
        let iou = if union == 0 {
            match empty {
                EmptyClass::Zero => 0.0,
                EmptyClass::Skip => f64::NAN,
            }
        } else {
            tp as f64 / union as f64
        };
        if !iou.is_nan() {
            sum += iou;
            counted += 1;
        }
        per_class.push(iou);
    }
    let correct: usize = (0..classes).map(|c| m[c][c]).sum();
    Ok(IouReport {
        per_class,
        mean_iou: if counted > 0 { sum / counted as f64 } else { 0.0 },
        accuracy: correct as f64 / pred.len() as f64,
    })
}

pub fn accuracy(pred: &[usize], gt: &[usize]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::input(format!("{} predictions for {} labels", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::input("no labels to evaluate"));
    }
    Ok(pred.iter().zip(gt).filter(|(p, g)| p == g).count() as f64 / pred.len() as f64)
}
