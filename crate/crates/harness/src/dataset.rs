//! Paired PET/CT cases on disk: `<id>_pet.<ext>`, `<id>_ct.<ext>` and an
//! optional `<id>_mask.<ext>` per patient, where `<ext>` is `fsgv`, `nii`
//! or `nii.gz`.

use std::path::{Path, PathBuf};

use fuseg3d_core::{ct_window, load_volume, save_volume, Modality, PreprocessConfig, Volume3D};

use crate::error::{HarnessError, Result};
use crate::phantom::{generate_phantom, PhantomSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub id: String,
    pub pet: Volume3D,
    pub ct: Volume3D,
    pub mask: Option<Volume3D>,
}

impl Case {
    pub fn new(id: impl Into<String>, pet: Volume3D, ct: Volume3D, mask: Option<Volume3D>) -> Result<Self> {
        let id = id.into();
        if pet.dims() != ct.dims() {
            return Err(HarnessError::Data(format!("{id}: PET {:?} and CT {:?} grids differ", pet.dims(), ct.dims())));
        }
        if let Some(m) = &mask {
            if m.dims() != pet.dims() {
                return Err(HarnessError::Data(format!("{id}: mask {:?} and PET {:?} grids differ", m.dims(), pet.dims())));
            }
        }
        Ok(Case { id, pet, ct, mask })
    }

    pub fn mask(&self) -> Result<&Volume3D> {
        self.mask.as_ref().ok_or_else(|| HarnessError::Data(format!("{}: no ground-truth mask", self.id)))
    }
}

const EXTENSIONS: [&str; 3] = ["fsgv", "nii.gz", "nii"];

fn find(dir: &Path, id: &str, role: &str) -> Option<PathBuf> {
    EXTENSIONS.iter().map(|ext| dir.join(format!("{id}_{role}.{ext}"))).find(|p| p.exists())
}

/// Brings inputs to what the network expects: CT in Hounsfield units is
/// windowed to `[0, 1]`; PET must already be in SUV.
pub fn prepare_pair(pet: Volume3D, ct: Volume3D, cfg: &PreprocessConfig) -> Result<(Volume3D, Volume3D)> {
    if pet.modality() != Modality::PetSuv {
        return Err(HarnessError::Data(format!(
            "PET must be in SUV ({}), found {}; convert with the acquisition metadata first",
            Modality::PetSuv,
            pet.modality()
        )));
    }
    let ct = match ct.modality() {
        Modality::CtHu => ct_window(&ct, cfg)?,
        Modality::CtNorm => ct,
        m => return Err(HarnessError::Data(format!("CT volume has modality {m}"))),
    };
    Ok((pet, ct))
}

pub fn load_case(dir: &Path, id: &str, cfg: &PreprocessConfig) -> Result<Case> {
    let pet_path = find(dir, id, "pet").ok_or_else(|| HarnessError::Data(format!("{id}: no PET volume in {}", dir.display())))?;
    let ct_path = find(dir, id, "ct").ok_or_else(|| HarnessError::Data(format!("{id}: no CT volume in {}", dir.display())))?;
    let pet = load_volume(&pet_path, None).or_else(|_| load_volume(&pet_path, Some(Modality::PetSuv)))?;
    let ct = load_volume(&ct_path, None).or_else(|_| load_volume(&ct_path, Some(Modality::CtHu)))?;
    let (pet, ct) = prepare_pair(pet, ct, cfg)?;
    let mask = find(dir, id, "mask").map(|p| load_volume(&p, Some(Modality::Mask))).transpose()?;
    Case::new(id, pet, ct, mask)
}

/// Every case in `dir`, sorted by patient id.
pub fn load_dataset(dir: &Path, cfg: &PreprocessConfig) -> Result<Vec<Case>> {
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let name = entry.map_err(|e| HarnessError::io(dir, e))?.file_name().to_string_lossy().into_owned();
        if let Some(id) = EXTENSIONS.iter().find_map(|ext| name.strip_suffix(&format!("_pet.{ext}"))) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    ids.dedup();
    if ids.is_empty() {
        return Err(HarnessError::Data(format!("no `<id>_pet.*` volumes in {}", dir.display())));
    }
    ids.iter().map(|id| load_case(dir, id, cfg)).collect()
}

/// Writes a case as `.fsgv` files.
pub fn save_case(dir: &Path, case: &Case) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    save_volume(&case.pet, &dir.join(format!("{}_pet.fsgv", case.id)))?;
    save_volume(&case.ct, &dir.join(format!("{}_ct.fsgv", case.id)))?;
    if let Some(m) = &case.mask {
        save_volume(m, &dir.join(format!("{}_mask.fsgv", case.id)))?;
    }
    Ok(())
}

/// `count` phantoms from `spec`, with seeds `spec.seed + i` and ids
/// `phantom-000`, `phantom-001`, ...
pub fn phantom_cohort(spec: &PhantomSpec, count: usize) -> Result<Vec<Case>> {
    (0..count)
        .map(|i| {
            let id = format!("phantom-{i:03}");
            let s = PhantomSpec { seed: spec.seed.wrapping_add(i as u64), patient_id: id.clone(), ..spec.clone() };
            let p = generate_phantom(&s)?;
            Case::new(id, p.pet, p.ct, Some(p.mask))
        })
        .collect()
}

/// Cases whose id is in `ids`, in the order of `ids`.
pub fn select<'a>(cases: &'a [Case], ids: &[String]) -> Result<Vec<&'a Case>> {
    ids.iter()
        .map(|id| cases.iter().find(|c| &c.id == id).ok_or_else(|| HarnessError::Data(format!("unknown patient `{id}`"))))
        .collect()
}
