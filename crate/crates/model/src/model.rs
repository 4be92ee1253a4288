//! Full segmentation network and its self-describing checkpoint.

use std::path::Path;

use fuseg3d_core::{Modality, ModelConfig, MsifConfig, Volume3D};
use fuseg3d_tensor::{join, named_params, no_grad, Adam, Archive, Init, Module, Param, Tensor};
use serde_json::json;

use crate::backbone::{Encoder, Pyramid};
use crate::decoder::Decoder;
use crate::error::{ModelError, Result};
use crate::msif::Msif;

pub const CHECKPOINT_FORMAT: &str = "fuseg3d-checkpoint";
pub const CHECKPOINT_VERSION: u64 = 1;

pub struct SegmentationModel {
    pub config: ModelConfig,
    pub msif_config: MsifConfig,
    pub encoder_pet: Encoder,
    pub encoder_ct: Encoder,
    pub fusion: Vec<Msif>,
    pub decoder: Decoder,
}

/// Everything produced on the way to the probability map.
pub struct ForwardTrace {
    pub pet: Pyramid,
    pub ct: Pyramid,
    pub fused: Vec<Tensor>,
    pub prob: Tensor,
}

/// A loaded checkpoint: the model, optional optimizer state and any
/// caller-supplied metadata.
pub struct Checkpoint {
    pub model: SegmentationModel,
    pub adam: Option<Adam>,
    pub extra: serde_json::Value,
}

impl SegmentationModel {
    pub fn new(config: ModelConfig, msif_config: MsifConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        msif_config.validate()?;
        let mut init = Init::new(seed);
        let encoder_pet = Encoder::new(&mut init, &config);
        let encoder_ct = Encoder::new(&mut init, &config);
        let fusion = (0..4)
            .map(|i| Msif::new(&mut init, config.stage_channels(i), i, &config, &msif_config))
            .collect::<Result<Vec<_>>>()?;
        let decoder = Decoder::new(&mut init, &config);
        Ok(SegmentationModel { config, msif_config, encoder_pet, encoder_ct, fusion, decoder })
    }

    fn check_inputs(&self, pet: &Tensor, ct: &Tensor) -> Result<()> {
        let c = self.config.num_input_channels_per_modality;
        for (name, t) in [("PET", pet), ("CT", ct)] {
            if t.rank() != 5 || t.dim(1) != c {
                return Err(ModelError::Shape(format!("{name} input must be (B, {c}, H, W, D), got {:?}", t.shape())));
            }
        }
        if pet.shape() != ct.shape() {
            return Err(ModelError::Shape(format!("PET {:?} and CT {:?} inputs differ", pet.shape(), ct.shape())));
        }
        Ok(())
    }

    pub fn forward_traced(&self, pet: &Tensor, ct: &Tensor) -> Result<ForwardTrace> {
        self.check_inputs(pet, ct)?;
        let p = self.encoder_pet.forward(pet);
        let c = self.encoder_ct.forward(ct);
        let fused = self
            .fusion
            .iter()
            .zip(p.stages.iter().zip(&c.stages))
            .map(|(m, (a, b))| m.forward(&a.tensor, &b.tensor))
            .collect::<Result<Vec<_>>>()?;
        let prob = self.decoder.forward(&fused, [&p.embedding, &c.embedding]);
        let s = pet.shape();
        let prob = prob.crop_to(&[s[0], 1, s[2], s[3], s[4]]);
        Ok(ForwardTrace { pet: p, ct: c, fused, prob })
    }

    /// `(B, Cin, H, W, D)` PET and CT → probabilities `(B, 1, H, W, D)`.
    pub fn forward(&self, pet: &Tensor, ct: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(pet, ct)?.prob)
    }

    /// Probability volume for one co-registered, preprocessed pair.
    pub fn predict_volume(&self, pet: &Volume3D, ct: &Volume3D) -> Result<Volume3D> {
        if pet.dims() != ct.dims() {
            return Err(ModelError::Shape(format!("PET {:?} and CT {:?} grids differ", pet.dims(), ct.dims())));
        }
        if self.config.num_input_channels_per_modality != 1 {
            return Err(ModelError::Shape("volume inference needs one channel per modality".into()));
        }
        let [h, w, d] = pet.dims();
        let shape = [1, 1, h, w, d];
        let prob = no_grad(|| self.forward(&Tensor::new(pet.data().to_vec(), &shape), &Tensor::new(ct.data().to_vec(), &shape)))?;
        Ok(pet.with_data(prob.to_vec(), Modality::Prob)?)
    }

    pub fn params(&self) -> Vec<(String, Param)> {
        named_params(self)
    }

    /// Symmetrizes every fusion module; see [`Msif::tie_modality_weights`].
    pub fn tie_fusion_weights(&self) {
        for m in &self.fusion {
            m.tie_modality_weights();
        }
    }

    pub fn to_archive(&self, adam: Option<&Adam>, extra: serde_json::Value) -> Archive {
        let mut a = Archive::new(json!({
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "model": self.config,
            "msif": self.msif_config,
            "extra": extra,
        }));
        for (name, p) in self.params() {
            a.insert(name, p.shape(), p.values());
        }
        if let Some(opt) = adam {
            opt.write_state(&mut a);
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Checkpoint> {
        let meta = &a.metadata;
        if meta.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(ModelError::Format("not a model checkpoint".into()));
        }
        let version = meta.get("version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_VERSION) {
            return Err(ModelError::Format(format!("unsupported checkpoint version {version:?}")));
        }
        let parse = |key: &str| meta.get(key).cloned().ok_or_else(|| ModelError::Format(format!("missing `{key}` metadata")));
        let config: ModelConfig =
            serde_json::from_value(parse("model")?).map_err(|e| ModelError::Format(format!("model config: {e}")))?;
        let msif_config: MsifConfig =
            serde_json::from_value(parse("msif")?).map_err(|e| ModelError::Format(format!("msif config: {e}")))?;
        let model = SegmentationModel::new(config, msif_config, 0)?;
        for (name, p) in model.params() {
            p.set_values(a.get_shaped(&name, p.shape())?);
        }
        let adam = if meta.get("adam").is_some() { Some(Adam::read_state(a)?) } else { None };
        let extra = meta.get("extra").cloned().unwrap_or(serde_json::Value::Null);
        Ok(Checkpoint { model, adam, extra })
    }

    pub fn save(&self, path: &Path, adam: Option<&Adam>, extra: serde_json::Value) -> Result<()> {
        Ok(self.to_archive(adam, extra).save(path)?)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Self::from_archive(&Archive::load(path)?)
    }
}

impl Module for SegmentationModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder_pet.visit(&join(prefix, "encoder_pet"), f);
        self.encoder_ct.visit(&join(prefix, "encoder_ct"), f);
        self.fusion.visit(&join(prefix, "msif"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }
}
