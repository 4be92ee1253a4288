//! Synthetic PET/CT phantoms with ellipsoidal lesions.

use fuseg3d_core::{Modality, Volume3D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    /// Centre in voxel coordinates `(h, w, d)`.
    pub center: [f64; 3],
    /// Semi-axes in voxels.
    pub semi_axes: [f64; 3],
    /// Peak uptake at the centre.
    pub suv: f64,
}

impl Ellipsoid {
    /// `Σ ((x_i − c_i) / a_i)²`; the lesion is where this is ≤ 1.
    pub fn radius2(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|i| ((p[i] - self.center[i]) / self.semi_axes[i]).powi(2)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub patient_id: String,
    /// Number of randomly placed lesions.
    pub lesions: usize,
    /// Semi-axis range in voxels.
    pub semi_axis_range: [f64; 2],
    pub lesion_suv_range: [f64; 2],
    pub background_suv: f64,
    /// Lesions placed as given, in addition to the random ones.
    pub fixed_lesions: Vec<Ellipsoid>,
    pub ct_tissue_level: f64,
    pub ct_texture_amplitude: f64,
    pub ct_texture_period_vox: f64,
    /// Added to normalized CT density inside lesions.
    pub ct_lesion_contrast: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [64, 64, 32],
            spacing_mm: [4.0, 4.0, 3.27],
            patient_id: "phantom-000".into(),
            lesions: 3,
            semi_axis_range: [2.0, 5.0],
            lesion_suv_range: [4.0, 12.0],
            background_suv: 1.0,
            fixed_lesions: Vec::new(),
            ct_tissue_level: 0.45,
            ct_texture_amplitude: 0.08,
            ct_texture_period_vox: 9.0,
            ct_lesion_contrast: 0.12,
            noise_sigma: 0.15,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.dims.contains(&0) {
            return bad(format!("phantom dims must be positive, got {:?}", self.dims));
        }
        if self.spacing_mm.iter().any(|s| !(*s > 0.0)) {
            return bad(format!("phantom spacing must be positive, got {:?}", self.spacing_mm));
        }
        let [lo, hi] = self.semi_axis_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("semi_axis_range {:?} must satisfy 0 < lo <= hi", self.semi_axis_range));
        }
        if self.lesions > 0 {
            if let Some(i) = (0..3).find(|&i| 2.0 * hi + 1.0 > self.dims[i] as f64) {
                return bad(format!("lesions with semi-axis {hi} do not fit along axis {i} of {:?}", self.dims));
            }
        }
        let [s_lo, s_hi] = self.lesion_suv_range;
        if !(s_lo > self.background_suv && s_lo <= s_hi) {
            return bad(format!("lesion SUV range {:?} must exceed background {}", self.lesion_suv_range, self.background_suv));
        }
        if !(self.background_suv >= 0.0 && self.noise_sigma >= 0.0) {
            return bad("background SUV and noise sigma must be non-negative".into());
        }
        for e in &self.fixed_lesions {
            if !(e.suv > self.background_suv) {
                return bad(format!("lesion SUV {} must exceed background {}", e.suv, self.background_suv));
            }
            for i in 0..3 {
                let (c, a, n) = (e.center[i], e.semi_axes[i], self.dims[i] as f64);
                if !(a > 0.0 && c - a >= -0.5 && c + a <= n - 0.5) {
                    return bad(format!("lesion at {:?} with semi-axes {:?} leaves the grid", e.center, e.semi_axes));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub pet: Volume3D,
    pub ct: Volume3D,
    pub mask: Volume3D,
    pub lesions: Vec<Ellipsoid>,
}

/// PET: background plus lesions whose uptake falls from the peak at the
/// centre to halfway above background at the rim, plus Gaussian noise
/// (clamped at zero). CT: a smooth tissue texture, denser inside lesions,
/// with a fifth of the PET noise, clamped to `[0, 1]`. Mask: voxels whose
/// centres lie inside any lesion.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut lesions = spec.fixed_lesions.clone();
    let [a_lo, a_hi] = spec.semi_axis_range;
    let [s_lo, s_hi] = spec.lesion_suv_range;
    for _ in 0..spec.lesions {
        let semi_axes = [0; 3].map(|_| rng.random_range(a_lo..=a_hi));
        let mut center = [0.0; 3];
        for i in 0..3 {
            center[i] = rng.random_range(semi_axes[i]..=spec.dims[i] as f64 - 1.0 - semi_axes[i]);
        }
        lesions.push(Ellipsoid { center, semi_axes, suv: rng.random_range(s_lo..=s_hi) });
    }
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| HarnessError::Config(format!("noise: {e}")))?;
    let [h, w, d] = spec.dims;
    let n = h * w * d;
    let mut pet = Vec::with_capacity(n);
    let mut ct = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    let bg = spec.background_suv;
    let k = std::f64::consts::TAU / spec.ct_texture_period_vox;
    for i in 0..h {
        for j in 0..w {
            for l in 0..d {
                let p = [i as f64, j as f64, l as f64];
                let mut uptake = bg;
                let mut inside = false;
                for e in &lesions {
                    let r2 = e.radius2(p);
                    if r2 <= 1.0 {
                        inside = true;
                        uptake = uptake.max(bg + (e.suv - bg) * (1.0 - 0.5 * r2));
                    }
                }
                let texture = (k * p[0]).sin() * (k * p[1]).sin() * (0.7 * k * p[2]).cos();
                let density = spec.ct_tissue_level
                    + spec.ct_texture_amplitude * texture
                    + if inside { spec.ct_lesion_contrast } else { 0.0 };
                pet.push((uptake + noise.sample(&mut rng)).max(0.0));
                ct.push((density + 0.2 * noise.sample(&mut rng)).clamp(0.0, 1.0));
                mask.push(inside as u8 as f64);
            }
        }
    }
    let id = spec.patient_id.as_str();
    Ok(Phantom {
        pet: Volume3D::new(pet, spec.dims, spec.spacing_mm, Modality::PetSuv, id)?,
        ct: Volume3D::new(ct, spec.dims, spec.spacing_mm, Modality::CtNorm, id)?,
        mask: Volume3D::new(mask, spec.dims, spec.spacing_mm, Modality::Mask, id)?,
        lesions,
    })
}
