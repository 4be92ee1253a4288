//! Dual-branch PET/CT segmentation network: per-modality shifted-window
//! encoders, multi-scale cross-modal fusion at every scale, and a U-shaped
//! residual decoder ending in a voxelwise sigmoid.

pub mod backbone;
pub mod decoder;
pub mod error;
pub mod layers;
pub mod loss;
pub mod model;
pub mod msif;
pub mod window;

use fuseg3d_tensor::Tensor;

pub use backbone::{Encoder, Pyramid};
pub use decoder::{Decoder, ResBlock, UpsampleBlock};
pub use error::{ModelError, Result};
pub use loss::soft_dice_loss;
pub use model::{Checkpoint, SegmentationModel};
pub use msif::{Msif, MsifTrace};
pub use window::WindowLayout;

/// A channel-first `(B, C, H, W, D)` map produced at encoder stage
/// `scale_index` (0 is the finest merged stage).
#[derive(Clone)]
pub struct FeatureMap {
    pub tensor: Tensor,
    pub scale_index: usize,
}

impl FeatureMap {
    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }
}
