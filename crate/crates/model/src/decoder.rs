//! U-shaped residual decoder over the fused pyramid.

use fuseg3d_core::ModelConfig;
use fuseg3d_tensor::{concat, join, Init, Module, Param, Tensor};

use crate::layers::{to_channels_first, to_channels_last, Conv3d, InstanceNorm, Linear};

/// `shortcut(x) + relu(IN(conv2(relu(IN(conv1(x))))))` with 3³ convolutions.
/// The shortcut is the identity when channels are unchanged, otherwise a
/// pointwise convolution.
pub struct ResBlock {
    pub conv1: Conv3d,
    pub norm1: InstanceNorm,
    pub conv2: Conv3d,
    pub norm2: InstanceNorm,
    pub shortcut: Option<Conv3d>,
}

impl ResBlock {
    pub fn new(init: &mut Init, cin: usize, cout: usize) -> Self {
        ResBlock {
            conv1: Conv3d::new(init, cin, cout, 3, false),
            norm1: InstanceNorm::new(cout),
            conv2: Conv3d::new(init, cout, cout, 3, false),
            norm2: InstanceNorm::new(cout),
            shortcut: (cin != cout).then(|| Conv3d::new(init, cin, cout, 1, false)),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let h = self.norm1.forward(&self.conv1.forward(x)).relu();
        let h = self.norm2.forward(&self.conv2.forward(&h)).relu();
        match &self.shortcut {
            Some(s) => s.forward(x).add(&h),
            None => x.add(&h),
        }
    }

    pub fn zero_weights(&self) {
        self.conv1.weight.fill(0.0);
        self.conv2.weight.fill(0.0);
    }
}

impl Module for ResBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.shortcut.visit(&join(prefix, "shortcut"), f);
    }
}

/// Transposed convolution with kernel = stride = `factor`, written as a
/// pointwise projection to `Cout · factor³` channels followed by
/// depth-to-space, then instance norm and ReLU.
pub struct UpsampleBlock {
    pub proj: Linear,
    pub norm: InstanceNorm,
    pub factor: usize,
    pub out_channels: usize,
}

impl UpsampleBlock {
    pub fn new(init: &mut Init, cin: usize, cout: usize, factor: usize) -> Self {
        UpsampleBlock {
            proj: Linear::new(init, cin, cout * factor * factor * factor, false),
            norm: InstanceNorm::new(cout),
            factor,
            out_channels: cout,
        }
    }

    /// Pre-normalization output `(B, Cout, fH, fW, fD)`.
    pub fn deconv(&self, x: &Tensor) -> Tensor {
        let s = x.shape().to_vec();
        let (f, c) = (self.factor, self.out_channels);
        let y = self.proj.forward(&to_channels_last(x));
        if f == 1 {
            return to_channels_first(&y);
        }
        y.reshape(&[s[0], s[2], s[3], s[4], c, f, f, f])
            .permute(&[0, 4, 1, 5, 2, 6, 3, 7])
            .reshape(&[s[0], c, s[2] * f, s[3] * f, s[4] * f])
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.norm.forward(&self.deconv(x)).relu()
    }
}

impl Module for UpsampleBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.proj.visit(&join(prefix, "proj"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }
}

/// One coarse-to-fine step: upsample, crop to the skip grid, concatenate the
/// skips, reduce channels.
pub struct DecoderLevel {
    pub up: UpsampleBlock,
    pub block: ResBlock,
}

impl Module for DecoderLevel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.up.visit(&join(prefix, "up"), f);
        self.block.visit(&join(prefix, "block"), f);
    }
}

impl DecoderLevel {
    fn forward(&self, x: &Tensor, skips: &[&Tensor]) -> Tensor {
        let skip_shape = skips[0].shape();
        let up = self.up.forward(x);
        let s = up.shape();
        let target = [s[0], s[1], skip_shape[2], skip_shape[3], skip_shape[4]];
        let up = if s == target { up } else { up.crop_to(&target) };
        let mut parts = vec![up];
        parts.extend(skips.iter().map(|t| (*t).clone()));
        self.block.forward(&concat(&parts, 1))
    }
}

/// Channel plan with embedding width `E` (stage `i` has `E·2^(i+1)`):
/// bottleneck at `16E`; levels reduce to `8E, 4E, 2E`; the finest level
/// concatenates both modality embeddings and reduces `3E → E`; the head
/// upsamples by the patch size to `max(E/2, 1)` channels.
pub struct Decoder {
    pub bottleneck: ResBlock,
    /// Coarse to fine: three fused-skip levels then the embedding level.
    pub levels: Vec<DecoderLevel>,
    pub final_up: UpsampleBlock,
    pub final_block: ResBlock,
    pub head: Conv3d,
}

impl Decoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Self {
        let e = cfg.embed_dim;
        let mut levels = Vec::with_capacity(4);
        for i in (0..3).rev() {
            let skip = cfg.stage_channels(i);
            let below = cfg.stage_channels(i + 1);
            levels.push(DecoderLevel { up: UpsampleBlock::new(init, below, skip, 2), block: ResBlock::new(init, 2 * skip, skip) });
        }
        levels.push(DecoderLevel { up: UpsampleBlock::new(init, 2 * e, e, 2), block: ResBlock::new(init, 3 * e, e) });
        let fe = (e / 2).max(1);
        Decoder {
            bottleneck: ResBlock::new(init, cfg.stage_channels(3), cfg.stage_channels(3)),
            levels,
            final_up: UpsampleBlock::new(init, e, fe, cfg.patch_size),
            final_block: ResBlock::new(init, fe, fe),
            head: Conv3d::new(init, fe, 1, 1, true),
        }
    }

    /// `fused` holds the four fused maps fine to coarse; `embeddings` are the
    /// PET and CT patch embeddings. Returns probabilities `(B, 1, pH', pW', pD')`
    /// on the padded grid; the caller crops.
    pub fn forward(&self, fused: &[Tensor], embeddings: [&Tensor; 2]) -> Tensor {
        let mut x = self.bottleneck.forward(&fused[3]);
        for (lvl, i) in self.levels[..3].iter().zip((0..3).rev()) {
            x = lvl.forward(&x, &[&fused[i]]);
        }
        x = self.levels[3].forward(&x, &embeddings);
        let x = self.final_block.forward(&self.final_up.forward(&x));
        self.head.forward(&x).sigmoid()
    }
}

impl Module for Decoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.bottleneck.visit(&join(prefix, "bottleneck"), f);
        self.levels.visit(&join(prefix, "levels"), f);
        self.final_up.visit(&join(prefix, "final_up"), f);
        self.final_block.visit(&join(prefix, "final_block"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
}
