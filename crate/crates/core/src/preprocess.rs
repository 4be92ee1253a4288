//! PET/CT intensity normalization, in-plane resampling and cropping.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::volume::{AcquisitionMeta, Modality, Volume3D};

/// Decay constant used in the SUV formula, `ln 2` rounded to three places.
pub const LN2_APPROX: f64 = 0.693;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_inplane: usize,
    pub crop_inplane: usize,
    pub ct_window_level: f64,
    pub ct_window_width: f64,
    /// Optional upper clip applied to SUV values after conversion.
    pub suv_clip: Option<f64>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_inplane: 256,
            crop_inplane: 224,
            ct_window_level: 40.0,
            ct_window_width: 400.0,
            suv_clip: None,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_inplane == 0 || self.crop_inplane == 0 {
            return Err(CoreError::Config("in-plane sizes must be >= 1".into()));
        }
        if self.crop_inplane > self.target_inplane {
            return Err(CoreError::Config(format!(
                "crop_inplane {} exceeds target_inplane {}",
                self.crop_inplane, self.target_inplane
            )));
        }
        if !(self.ct_window_width > 0.0) {
            return Err(CoreError::Config(format!("ct_window_width must be > 0, got {}", self.ct_window_width)));
        }
        if let Some(c) = self.suv_clip {
            if !(c > 0.0) {
                return Err(CoreError::Config(format!("suv_clip must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

fn expect_modality(v: &Volume3D, m: Modality) -> Result<()> {
    if v.modality() != m {
        return Err(CoreError::Parameter(format!("expected a {m} volume, got {}", v.modality())));
    }
    Ok(())
}

/// Multiplier turning a calibrated activity concentration into SUV_bw.
pub fn suv_factor(meta: &AcquisitionMeta) -> Result<f64> {
    meta.validate()?;
    let decayed = meta.injected_dose_bq * (-LN2_APPROX * (meta.t1_s - meta.t0_s) / meta.half_life_s).exp();
    Ok(meta.weight_kg * 1000.0 / decayed)
}

/// Body-weight standardized uptake value of every voxel.
pub fn suv_bw(pet: &Volume3D, meta: &AcquisitionMeta) -> Result<Volume3D> {
    expect_modality(pet, Modality::PetRaw)?;
    let k = suv_factor(meta)?;
    let data = pet.data().iter().map(|&pv| (meta.rescale_slope * pv + meta.rescale_intercept) * k).collect();
    pet.with_data(data, Modality::PetSuv)
}

/// Maps `[level - width/2, level + width/2]` linearly onto `[0, 1]`, clamped.
pub fn ct_window(ct: &Volume3D, cfg: &PreprocessConfig) -> Result<Volume3D> {
    expect_modality(ct, Modality::CtHu)?;
    if !(cfg.ct_window_width > 0.0) {
        return Err(CoreError::Parameter(format!("window width must be > 0, got {}", cfg.ct_window_width)));
    }
    let lo = cfg.ct_window_level - cfg.ct_window_width / 2.0;
    let data = ct.data().iter().map(|&hu| ((hu - lo) / cfg.ct_window_width).clamp(0.0, 1.0)).collect();
    ct.with_data(data, Modality::CtNorm)
}

/// Catmull-Rom weights for taps at offsets -1, 0, 1, 2 from the base sample.
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Mirror index into `0..n` without repeating the edge sample.
fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Sampling plan for one axis: base index and weights per output sample.
fn plan(n_in: usize, n_out: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let x = (o as f64 + 0.5) * ratio - 0.5;
            let base = x.floor();
            let w = catmull_rom(x - base);
            let b = base as isize;
            ([mirror(b - 1, n_in), mirror(b, n_in), mirror(b + 1, n_in), mirror(b + 2, n_in)], w)
        })
        .collect()
}

/// Interpolates as `v1 + Σ w_i (v_i - v1)`, which returns a constant
/// input exactly.
#[inline]
fn interp(v: [f64; 4], w: &[f64; 4]) -> f64 {
    v[1] + w[0] * (v[0] - v[1]) + w[2] * (v[2] - v[1]) + w[3] * (v[3] - v[1])
}

/// Bicubic resampling of every axial slice to `target × target`. Spacing is
/// rescaled so the physical field of view is unchanged.
pub fn resample_inplane(v: &Volume3D, target: usize) -> Result<Volume3D> {
    if target == 0 {
        return Err(CoreError::Parameter("resample target must be >= 1".into()));
    }
    let [nh, nw, nd] = v.dims();
    if nh == target && nw == target {
        return Ok(v.clone());
    }
    let src = v.data();
    // Along w first: (nh, target, nd).
    let pw = plan(nw, target);
    let mut tmp = vec![0.0; nh * target * nd];
    for h in 0..nh {
        for (o, (idx, w)) in pw.iter().enumerate() {
            let dst = (h * target + o) * nd;
            for d in 0..nd {
                let at = |i: usize| src[(h * nw + idx[i]) * nd + d];
                tmp[dst + d] = interp([at(0), at(1), at(2), at(3)], w);
            }
        }
    }
    let ph = plan(nh, target);
    let mut out = vec![0.0; target * target * nd];
    for (o, (idx, w)) in ph.iter().enumerate() {
        for c in 0..target {
            let dst = (o * target + c) * nd;
            for d in 0..nd {
                let at = |i: usize| tmp[(idx[i] * target + c) * nd + d];
                out[dst + d] = interp([at(0), at(1), at(2), at(3)], w);
            }
        }
    }
    let sp = v.spacing_mm();
    let spacing = [sp[0] * nh as f64 / target as f64, sp[1] * nw as f64 / target as f64, sp[2]];
    // Cubic overshoot leaves [0, 1]; bounded inputs come back clamped as
    // probabilities.
    let modality = match v.modality() {
        Modality::Mask | Modality::Prob => {
            for x in out.iter_mut() {
                *x = x.clamp(0.0, 1.0);
            }
            Modality::Prob
        }
        m => m,
    };
    Volume3D::new(out, [target, target, nd], spacing, modality, v.patient_id())
}

/// Central `crop × crop` region of every slice; the start offset on each
/// in-plane axis is `(size - crop) / 2` rounded down.
pub fn center_crop(v: &Volume3D, crop: usize) -> Result<Volume3D> {
    let [nh, nw, nd] = v.dims();
    if crop > nh || crop > nw || crop == 0 {
        return Err(CoreError::Parameter(format!("crop {crop} does not fit in-plane size {nh}x{nw}")));
    }
    if crop == nh && crop == nw {
        return Ok(v.clone());
    }
    let (oh, ow) = ((nh - crop) / 2, (nw - crop) / 2);
    let src = v.data();
    let mut out = Vec::with_capacity(crop * crop * nd);
    for h in oh..oh + crop {
        let row = (h * nw + ow) * nd;
        out.extend_from_slice(&src[row..row + crop * nd]);
    }
    Volume3D::new(out, [crop, crop, nd], v.spacing_mm(), v.modality(), v.patient_id())
}

/// SUV conversion and CT windowing, then resampling and cropping of both
/// modalities onto a shared grid.
pub fn preprocess_pair(
    pet_raw: &Volume3D,
    ct_hu: &Volume3D,
    meta: &AcquisitionMeta,
    cfg: &PreprocessConfig,
) -> Result<(Volume3D, Volume3D)> {
    cfg.validate()?;
    let (dp, dc) = (pet_raw.dims()[2], ct_hu.dims()[2]);
    if dp != dc {
        return Err(CoreError::Alignment(format!("PET has {dp} slices but CT has {dc}")));
    }
    let (zp, zc) = (pet_raw.spacing_mm()[2], ct_hu.spacing_mm()[2]);
    if (zp - zc).abs() > 1e-6 * zp.max(zc) {
        return Err(CoreError::Alignment(format!("slice spacing differs: PET {zp} mm, CT {zc} mm")));
    }
    let mut suv = suv_bw(pet_raw, meta)?;
    if let Some(clip) = cfg.suv_clip {
        let data = suv.data().iter().map(|v| v.min(clip)).collect();
        suv = suv.with_data(data, Modality::PetSuv)?;
    }
    let ct = ct_window(ct_hu, cfg)?;
    let pet = center_crop(&resample_inplane(&suv, cfg.target_inplane)?, cfg.crop_inplane)?;
    let ct = center_crop(&resample_inplane(&ct, cfg.target_inplane)?, cfg.crop_inplane)?;
    let ct = ct.with_data(ct.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(), Modality::CtNorm)?;
    Ok((pet, ct))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> AcquisitionMeta {
        AcquisitionMeta {
            rescale_slope: 1.0,
            rescale_intercept: 0.0,
            injected_dose_bq: 3.7e8,
            half_life_s: 6586.2,
            t0_s: 0.0,
            t1_s: 0.0,
            weight_kg: 70.0,
        }
    }

    #[test]
    fn catmull_rom_weights_sum_to_one_and_interpolate() {
        for t in [0.0, 0.25, 0.5, 0.9] {
            let w = catmull_rom(t);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(catmull_rom(0.0), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn mirror_reflects_without_edge_repeat() {
        let got: Vec<usize> = (-3..8).map(|i| mirror(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(mirror(-2, 1), 0);
    }

    #[test]
    fn linear_ramp_is_reproduced_in_the_interior() {
        // Catmull-Rom reproduces linear functions away from the border.
        let v = Volume3D::from_fn([16, 16, 1], [1.0; 3], Modality::CtHu, "p", |_, w, _| w as f64).unwrap();
        let r = resample_inplane(&v, 32).unwrap();
        for c in 4..28 {
            let expected = (c as f64 + 0.5) * 0.5 - 0.5;
            assert!((r.get(10, c, 0) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn suv_rejects_wrong_modality() {
        let v = Volume3D::filled([2, 2, 2], [1.0; 3], Modality::CtHu, "p", 1.0).unwrap();
        assert!(suv_bw(&v, &meta()).is_err());
    }
}
