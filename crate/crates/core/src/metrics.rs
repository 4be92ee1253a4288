//! Soft Dice loss, thresholding and overlap metrics.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::volume::{Modality, Volume3D};

pub const DEFAULT_DICE_EPS: f64 = 1e-5;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(CoreError::Metric(format!("shape mismatch: {} vs {} voxels", a.len(), b.len())));
    }
    Ok(())
}

fn same_dims(a: &Volume3D, b: &Volume3D) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(CoreError::Metric(format!("shape mismatch: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `1 - (2 Σ p g + ε) / (Σ p + Σ g + ε)`.
pub fn dice_loss(pred: &[f64], gt: &[f64], eps: f64) -> Result<f64> {
    same_len(pred, gt)?;
    let (inter, sp, sg) = sums(pred, gt);
    Ok(1.0 - (2.0 * inter + eps) / (sp + sg + eps))
}

/// Gradient of [`dice_loss`] with respect to `pred`.
pub fn dice_loss_grad(pred: &[f64], gt: &[f64], eps: f64) -> Result<Vec<f64>> {
    same_len(pred, gt)?;
    let (inter, sp, sg) = sums(pred, gt);
    let num = 2.0 * inter + eps;
    let den = sp + sg + eps;
    Ok(gt.iter().map(|&g| -(2.0 * g * den - num) / (den * den)).collect())
}

fn sums(pred: &[f64], gt: &[f64]) -> (f64, f64, f64) {
    let mut inter = 0.0;
    let mut sp = 0.0;
    let mut sg = 0.0;
    for (&p, &g) in pred.iter().zip(gt) {
        inter += p * g;
        sp += p;
        sg += g;
    }
    (inter, sp, sg)
}

/// Volume-level [`dice_loss`] with a shape check.
pub fn dice_loss_volumes(pred: &Volume3D, gt: &Volume3D, eps: f64) -> Result<f64> {
    same_dims(pred, gt)?;
    dice_loss(pred.data(), gt.data(), eps)
}

/// Voxel is foreground iff its probability strictly exceeds `tau`.
pub fn binarize(pred: &Volume3D, tau: f64) -> Result<Volume3D> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(CoreError::Parameter(format!("threshold must lie in (0, 1), got {tau}")));
    }
    let data = pred.data().iter().map(|&p| if p > tau { 1.0 } else { 0.0 }).collect();
    pred.with_data(data, Modality::Mask)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn is_binary(v: &[f64]) -> bool {
    v.iter().all(|&x| x == 0.0 || x == 1.0)
}

/// Counts agreement between two binary masks.
pub fn confusion(pred: &Volume3D, gt: &Volume3D) -> Result<ConfusionCounts> {
    same_dims(pred, gt)?;
    confusion_slices(pred.data(), gt.data())
}

pub fn confusion_slices(pred: &[f64], gt: &[f64]) -> Result<ConfusionCounts> {
    same_len(pred, gt)?;
    if !is_binary(pred) || !is_binary(gt) {
        return Err(CoreError::Metric("confusion counts need binary masks".into()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p == 1.0, g == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn pred_empty(&self) -> bool {
        self.tp + self.fp == 0
    }

    fn gt_empty(&self) -> bool {
        self.tp + self.fn_ == 0
    }

    /// Ratio with the empty-mask convention: 1 when both masks are empty,
    /// 0 when only one is.
    fn ratio(&self, num: u64, den: u64) -> f64 {
        if den == 0 {
            return if self.pred_empty() && self.gt_empty() { 1.0 } else { 0.0 };
        }
        num as f64 / den as f64
    }

    pub fn dsc(&self) -> f64 {
        self.ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn sensitivity(&self) -> f64 {
        self.ratio(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        self.ratio(self.tp, self.tp + self.fp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub patient_id: String,
    #[serde(rename = "DSC")]
    pub dsc: f64,
    pub sensitivity: f64,
    pub precision: f64,
}

impl MetricRow {
    pub fn new(patient_id: impl Into<String>, c: &ConfusionCounts) -> Self {
        MetricRow { patient_id: patient_id.into(), dsc: c.dsc(), sensitivity: c.sensitivity(), precision: c.precision() }
    }
}

/// Macro average over patients: `(DSC, sensitivity, precision)`.
pub fn macro_average(rows: &[MetricRow]) -> (f64, f64, f64) {
    if rows.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let n = rows.len() as f64;
    (
        rows.iter().map(|r| r.dsc).sum::<f64>() / n,
        rows.iter().map(|r| r.sensitivity).sum::<f64>() / n,
        rows.iter().map(|r| r.precision).sum::<f64>() / n,
    )
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CoreError::Io { path: "<csv>".into(), source: e })?;
    Ok(())
}

pub fn save_metrics_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    write_metrics_csv(rows, f)
}
