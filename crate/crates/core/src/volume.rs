//! Scalar 3D volumes and PET acquisition metadata.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// What the values of a volume mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Modality {
    PetRaw,
    PetSuv,
    CtHu,
    CtNorm,
    Mask,
    Prob,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::PetRaw => "PET_RAW",
            Modality::PetSuv => "PET_SUV",
            Modality::CtHu => "CT_HU",
            Modality::CtNorm => "CT_NORM",
            Modality::Mask => "MASK",
            Modality::Prob => "PROB",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let all = [
            Modality::PetRaw,
            Modality::PetSuv,
            Modality::CtHu,
            Modality::CtNorm,
            Modality::Mask,
            Modality::Prob,
        ];
        all.into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| CoreError::Metadata(format!("unknown modality `{s}`")))
    }
}

/// A scalar grid of shape `(H, W, D)` with voxel spacing in millimetres.
///
/// Storage is row-major with the slice axis fastest: voxel `(h, w, d)` lives
/// at `(h * W + w) * D + d`. Volumes are immutable once built; the
/// transforming methods return new volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    data: Vec<f64>,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    modality: Modality,
    patient_id: String,
}

impl Volume3D {
    pub fn new(
        data: Vec<f64>,
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        modality: Modality,
        patient_id: impl Into<String>,
    ) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if data.len() != n {
            return Err(CoreError::InvalidVolume(format!(
                "{} values do not fill a {:?} grid",
                data.len(),
                dims
            )));
        }
        if let Some(s) = spacing_mm.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(CoreError::InvalidVolume(format!("spacing must be positive, got {s} in {spacing_mm:?}")));
        }
        check_values(&data, modality)?;
        Ok(Volume3D { data, dims, spacing_mm, modality, patient_id: patient_id.into() })
    }

    pub fn filled(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        modality: Modality,
        patient_id: impl Into<String>,
        value: f64,
    ) -> Result<Self> {
        Self::new(vec![value; dims.iter().product()], dims, spacing_mm, modality, patient_id)
    }

    /// Builds a volume by evaluating `f(h, w, d)` at every voxel.
    pub fn from_fn(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        modality: Modality,
        patient_id: impl Into<String>,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for h in 0..dims[0] {
            for w in 0..dims[1] {
                for d in 0..dims[2] {
                    data.push(f(h, w, d));
                }
            }
        }
        Self::new(data, dims, spacing_mm, modality, patient_id)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, d: usize) -> usize {
        (h * self.dims[1] + w) * self.dims[2] + d
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, d: usize) -> f64 {
        self.data[self.index(h, w, d)]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing_mm.iter().product()
    }

    /// Same geometry and identity, new values and modality.
    pub fn with_data(&self, data: Vec<f64>, modality: Modality) -> Result<Self> {
        Self::new(data, self.dims, self.spacing_mm, modality, self.patient_id.clone())
    }

    pub fn with_patient_id(mut self, patient_id: impl Into<String>) -> Self {
        self.patient_id = patient_id.into();
        self
    }

    /// Slices `start..start + len` along the depth axis.
    pub fn depth_range(&self, start: usize, len: usize) -> Result<Self> {
        let [h, w, d] = self.dims;
        if start + len > d {
            return Err(CoreError::Parameter(format!("depth range {start}+{len} exceeds depth {d}")));
        }
        let mut data = Vec::with_capacity(h * w * len);
        for row in self.data.chunks(d) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Self::new(data, [h, w, len], self.spacing_mm, self.modality, self.patient_id.clone())
    }
}

fn check_values(data: &[f64], modality: Modality) -> Result<()> {
    match modality {
        Modality::Mask => {
            if let Some(v) = data.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(CoreError::InvalidVolume(format!("mask value {v} is not 0 or 1")));
            }
        }
        Modality::Prob => {
            if let Some(v) = data.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
                return Err(CoreError::InvalidVolume(format!("probability {v} outside [0, 1]")));
            }
        }
        _ => {}
    }
    Ok(())
}

/// PET acquisition parameters needed for body-weight SUV. Times are in
/// seconds on a common clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionMeta {
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
    pub injected_dose_bq: f64,
    pub half_life_s: f64,
    pub t0_s: f64,
    pub t1_s: f64,
    pub weight_kg: f64,
}

impl AcquisitionMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.injected_dose_bq > 0.0) {
            return Err(CoreError::Parameter(format!("injected dose must be > 0, got {}", self.injected_dose_bq)));
        }
        if !(self.half_life_s > 0.0) {
            return Err(CoreError::Parameter(format!("half-life must be > 0, got {}", self.half_life_s)));
        }
        if !(self.weight_kg > 0.0) {
            return Err(CoreError::Parameter(format!("weight must be > 0, got {}", self.weight_kg)));
        }
        if !(self.t1_s >= self.t0_s) {
            return Err(CoreError::Parameter(format!(
                "acquisition time {} precedes injection time {}",
                self.t1_s, self.t0_s
            )));
        }
        Ok(())
    }
}
