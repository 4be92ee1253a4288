//! The toolkit's single JSON configuration.

use std::path::Path;

use fuseg3d_core::{ModelConfig, MsifConfig, PreprocessConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Slices per training window.
    pub window_depth: usize,
    /// Inference stride; `None` means `window_depth / 2`.
    pub inference_stride: Option<usize>,
    pub folds: usize,
    pub seed: u64,
    pub max_steps: u64,
    pub batch_size: usize,
    /// Optimizer steps between validation rounds.
    pub val_every: u64,
    /// Fraction of the training patients held out for validation.
    pub val_fraction: f64,
    /// Validation rounds without improvement before stopping.
    pub early_stop_patience: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub loss_epsilon: f64,
    pub threshold: f64,
    /// Prefetched training batches.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            window_depth: 32,
            inference_stride: None,
            folds: 5,
            seed: 0,
            max_steps: 5000,
            batch_size: 1,
            val_every: 100,
            val_fraction: 0.2,
            early_stop_patience: 20,
            plateau_factor: 0.5,
            plateau_patience: 10,
            loss_epsilon: 1e-5,
            threshold: 0.5,
            prefetch: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("train.lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("train.{name} must lie in (0, 1), got {b}"));
            }
        }
        if self.window_depth == 0 {
            return bad("train.window_depth must be >= 1".into());
        }
        let stride = self.stride();
        if stride == 0 || stride > self.window_depth {
            return bad(format!("inference stride {stride} must lie in 1..={}", self.window_depth));
        }
        if self.folds < 2 {
            return bad(format!("train.folds must be >= 2, got {}", self.folds));
        }
        if self.batch_size == 0 || self.val_every == 0 || self.prefetch == 0 {
            return bad("train.batch_size, val_every and prefetch must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("train.val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("train.plateau_factor must lie in (0, 1), got {}", self.plateau_factor));
        }
        if !(self.loss_epsilon > 0.0) {
            return bad("train.loss_epsilon must be positive".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("train.threshold must lie in (0, 1), got {}", self.threshold));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.inference_stride.unwrap_or((self.window_depth / 2).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub msif: MsifConfig,
    pub train: TrainConfig,
}

impl ToolkitConfig {
    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.model.validate()?;
        self.msif.validate()?;
        self.train.validate()?;
        if self.train.window_depth % self.model.patch_size != 0 {
            return Err(HarnessError::Config(format!(
                "train.window_depth {} is not a multiple of patch_size {}",
                self.train.window_depth, self.model.patch_size
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg: ToolkitConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
