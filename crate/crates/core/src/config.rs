//! Architectural hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub depths: [usize; 4],
    pub window_size: usize,
    pub fusion_kernels: Vec<usize>,
    pub conv_stem_channels: usize,
    pub num_input_channels_per_modality: usize,
    pub mlp_ratio: usize,
    pub relative_position_bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch_size: 2,
            embed_dim: 24,
            num_heads: 4,
            depths: [2, 2, 2, 2],
            window_size: 7,
            fusion_kernels: vec![1, 3, 5],
            conv_stem_channels: 16,
            num_input_channels_per_modality: 1,
            mlp_ratio: 4,
            relative_position_bias: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CoreError::Config(msg));
        if self.patch_size == 0 {
            return bad("patch_size must be >= 1".into());
        }
        if self.window_size == 0 {
            return bad("window_size must be >= 1".into());
        }
        if self.num_heads == 0 || self.embed_dim == 0 || self.embed_dim % self.num_heads != 0 {
            return bad(format!("embed_dim {} is not divisible by num_heads {}", self.embed_dim, self.num_heads));
        }
        check_kernels(&self.fusion_kernels, "fusion_kernels")?;
        if self.conv_stem_channels == 0 || self.num_input_channels_per_modality == 0 || self.mlp_ratio == 0 {
            return bad("channel counts and mlp_ratio must be >= 1".into());
        }
        Ok(())
    }

    /// Channels of encoder stage `i` (0-based): `embed_dim · 2^(i+1)`.
    pub fn stage_channels(&self, i: usize) -> usize {
        self.embed_dim << (i + 1)
    }

    /// Total downsampling of encoder stage `i`: `patch_size · 2^(i+1)`.
    pub fn stage_stride(&self, i: usize) -> usize {
        self.patch_size << (i + 1)
    }
}

/// Fusion-module settings. `kernels`, when present, overrides
/// `ModelConfig::fusion_kernels`. The three toggles select the ablation
/// wiring: multi-scale kernels, cross-modal attention, gated multi-scale
/// aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsifConfig {
    pub kernels: Option<Vec<usize>>,
    pub conventional_values: bool,
    pub reduction_ratio: usize,
    pub spatial_kernel: usize,
    pub shifted_windows: bool,
    pub multi_scale: bool,
    pub cross_modal_attention: bool,
    pub gated_fusion: bool,
}

impl Default for MsifConfig {
    fn default() -> Self {
        MsifConfig {
            kernels: None,
            conventional_values: false,
            reduction_ratio: 4,
            spatial_kernel: 7,
            shifted_windows: true,
            multi_scale: true,
            cross_modal_attention: true,
            gated_fusion: true,
        }
    }
}

impl MsifConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = &self.kernels {
            check_kernels(k, "msif.kernels")?;
        }
        if self.reduction_ratio == 0 {
            return Err(CoreError::Config("msif.reduction_ratio must be >= 1".into()));
        }
        if self.spatial_kernel % 2 == 0 {
            return Err(CoreError::Config(format!("msif.spatial_kernel {} must be odd", self.spatial_kernel)));
        }
        Ok(())
    }

    /// Kernel sizes actually used: the override or the model's list, cut to
    /// the first entry when multi-scale extraction is off.
    pub fn effective_kernels(&self, model: &ModelConfig) -> Vec<usize> {
        let all = self.kernels.clone().unwrap_or_else(|| model.fusion_kernels.clone());
        if self.multi_scale {
            all
        } else {
            all.into_iter().take(1).collect()
        }
    }
}

fn check_kernels(kernels: &[usize], what: &str) -> Result<()> {
    if kernels.is_empty() {
        return Err(CoreError::Config(format!("{what} must not be empty")));
    }
    if let Some(k) = kernels.iter().find(|k| *k % 2 == 0) {
        return Err(CoreError::Config(format!("{what} contains even kernel size {k}")));
    }
    Ok(())
}
