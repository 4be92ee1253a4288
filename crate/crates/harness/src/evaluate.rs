//! Stitched full-volume inference and per-patient scoring.

use std::path::{Path, PathBuf};

use fuseg3d_core::metrics::save_metrics_csv;
use fuseg3d_core::tmtv::write_records_csv;
use fuseg3d_core::{binarize, confusion, tmtv, MetricRow, Modality, TmtvRecord, Volume3D};
use fuseg3d_model::SegmentationModel;
use fuseg3d_tensor::{no_grad, Tensor};

use crate::dataset::Case;
use crate::error::{HarnessError, Result};
use crate::windows::{sliding_windows, stitch, Window};

/// Anything that maps a PET/CT window pair to a probability volume.
pub trait Segmenter {
    fn predict(&self, pet: &Volume3D, ct: &Volume3D) -> Result<Volume3D>;
}

impl Segmenter for SegmentationModel {
    fn predict(&self, pet: &Volume3D, ct: &Volume3D) -> Result<Volume3D> {
        if pet.dims() != ct.dims() {
            return Err(HarnessError::Data(format!("PET {:?} and CT {:?} grids differ", pet.dims(), ct.dims())));
        }
        let [h, w, d] = pet.dims();
        let shape = [1, 1, h, w, d];
        let prob = no_grad(|| self.forward(&Tensor::new(pet.data().to_vec(), &shape), &Tensor::new(ct.data().to_vec(), &shape)))?;
        let prob = prob.to_vec();
        if prob.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::Numerical(format!("{}: non-finite probabilities", pet.patient_id())));
        }
        Ok(pet.with_data(prob, Modality::Prob)?)
    }
}

/// Predicts every depth window and averages the overlaps; `order` permutes
/// the windows before prediction.
pub fn predict_stitched_in_order(
    seg: &dyn Segmenter,
    pet: &Volume3D,
    ct: &Volume3D,
    depth: usize,
    stride: usize,
    order: &[usize],
) -> Result<Volume3D> {
    let pw = sliding_windows(pet, depth, stride)?;
    let cw = sliding_windows(ct, depth, stride)?;
    if order.len() != pw.len() {
        return Err(HarnessError::Config(format!("window order has {} entries for {} windows", order.len(), pw.len())));
    }
    let preds = order
        .iter()
        .map(|&i| Ok(Window { offset: pw[i].offset, volume: seg.predict(&pw[i].volume, &cw[i].volume)? }))
        .collect::<Result<Vec<_>>>()?;
    stitch(&preds, pet)
}

pub fn predict_stitched(seg: &dyn Segmenter, pet: &Volume3D, ct: &Volume3D, depth: usize, stride: usize) -> Result<Volume3D> {
    let n = sliding_windows(pet, depth, stride)?.len();
    predict_stitched_in_order(seg, pet, ct, depth, stride, &(0..n).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Vec<MetricRow>,
    pub tmtv: Vec<TmtvRecord>,
}

impl Evaluation {
    pub fn mean_dsc(&self) -> f64 {
        self.metrics.iter().map(|r| r.dsc).sum::<f64>() / self.metrics.len().max(1) as f64
    }

    /// Writes `metrics.csv` and `tmtv.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let (m, t) = (dir.join("metrics.csv"), dir.join("tmtv.csv"));
        save_metrics_csv(&self.metrics, &m)?;
        write_records_csv(&self.tmtv, &t)?;
        Ok(vec![m, t])
    }
}

pub struct EvalSettings {
    pub depth: usize,
    pub stride: usize,
    pub threshold: f64,
    pub fold: usize,
}

/// Binarized stitched prediction scored against each case's mask.
pub fn evaluate(seg: &dyn Segmenter, cases: &[&Case], s: &EvalSettings) -> Result<Evaluation> {
    let mut metrics = Vec::with_capacity(cases.len());
    let mut records = Vec::with_capacity(cases.len());
    for case in cases {
        let gt = case.mask()?;
        let prob = predict_stitched(seg, &case.pet, &case.ct, s.depth, s.stride)?;
        let pred = binarize(&prob, s.threshold)?;
        metrics.push(MetricRow::new(case.id.clone(), &confusion(&pred, gt)?));
        records.push(TmtvRecord { patient_id: case.id.clone(), fold: s.fold, ctmtv_ml: tmtv(&pred)?, gtmtv_ml: tmtv(gt)? });
    }
    Ok(Evaluation { metrics, tmtv: records })
}
