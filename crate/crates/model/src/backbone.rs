//! Per-modality shifted-window transformer encoder.

use std::rc::Rc;

use fuseg3d_core::ModelConfig;
use fuseg3d_tensor::{attention, join, Init, Module, PadMode, Param, RelativeBias, Tensor, WindowMask};

use crate::layers::{to_channels_first, LayerNorm, Linear};
use crate::window::{relative_position_index, WindowLayout};
use crate::FeatureMap;

/// `(G, N, 3C)` → three `(G, heads, N, C / heads)` tensors.
pub fn split_qkv(qkv: &Tensor, heads: usize) -> (Tensor, Tensor, Tensor) {
    let (g, n, c3) = (qkv.dim(0), qkv.dim(1), qkv.dim(2));
    let dh = c3 / 3 / heads;
    let t = qkv.reshape(&[g, n, 3, heads, dh]).permute(&[2, 0, 3, 1, 4]);
    let part = |i| t.narrow(0, i, 1).reshape(&[g, heads, n, dh]);
    (part(0), part(1), part(2))
}

/// `(G, heads, N, dh)` → `(G, N, heads · dh)`.
pub fn merge_heads(x: &Tensor) -> Tensor {
    let s = x.shape().to_vec();
    x.permute(&[0, 2, 1, 3]).reshape(&[s[0], s[2], s[1] * s[3]])
}

/// Windowed multi-head self-attention with an optional learned relative
/// position bias.
pub struct WindowAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub bias_table: Option<Param>,
    pub heads: usize,
    index: Rc<Vec<usize>>,
}

impl WindowAttention {
    pub fn new(init: &mut Init, dim: usize, heads: usize, window: usize, relative_bias: bool) -> Self {
        let span = 2 * window - 1;
        WindowAttention {
            qkv: Linear::new(init, dim, 3 * dim, true),
            proj: Linear::new(init, dim, dim, true),
            bias_table: relative_bias.then(|| init.trunc_normal(&[span * span * span, heads], 0.02)),
            heads,
            index: Rc::new(relative_position_index(window)),
        }
    }

    /// `(G, N, C)` windows → `(G, N, C)`.
    pub fn forward(&self, windows: &Tensor, mask: Option<&Rc<WindowMask>>) -> Tensor {
        let (q, k, v) = split_qkv(&self.qkv.forward(windows), self.heads);
        let scale = 1.0 / (q.dim(3) as f64).sqrt();
        let bias = self.bias_table.as_ref().map(|t| RelativeBias { table: t.tensor().clone(), index: self.index.clone() });
        let out = attention(&q, &k, &v, scale, bias.as_ref(), mask);
        self.proj.forward(&merge_heads(&out))
    }

    /// Softmax weights `(G, heads, N, N)` for inspection.
    pub fn probabilities(&self, windows: &Tensor, mask: Option<&Rc<WindowMask>>) -> Vec<f64> {
        let (q, k, _) = split_qkv(&self.qkv.forward(windows), self.heads);
        let scale = 1.0 / (q.dim(3) as f64).sqrt();
        let bias = self.bias_table.as_ref().map(|t| RelativeBias { table: t.tensor().clone(), index: self.index.clone() });
        fuseg3d_tensor::attention_probs(&q, &k, scale, bias.as_ref(), mask)
    }
}

impl Module for WindowAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.qkv.visit(&join(prefix, "qkv"), f);
        self.proj.visit(&join(prefix, "proj"), f);
        if let Some(t) = &self.bias_table {
            f(&join(prefix, "relative_bias"), t);
        }
    }
}

/// Pre-norm transformer block over windows, optionally shifted:
/// `x + A(LN(x))` then `x + MLP(LN(x))`.
pub struct SwinBlock {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub window: usize,
    pub shifted: bool,
}

impl SwinBlock {
    pub fn new(init: &mut Init, dim: usize, cfg: &ModelConfig, shifted: bool) -> Self {
        SwinBlock {
            norm1: LayerNorm::new(dim),
            attn: WindowAttention::new(init, dim, cfg.num_heads, cfg.window_size, cfg.relative_position_bias),
            norm2: LayerNorm::new(dim),
            fc1: Linear::new(init, dim, cfg.mlp_ratio * dim, true),
            fc2: Linear::zeros(cfg.mlp_ratio * dim, dim, true),
            window: cfg.window_size,
            shifted,
        }
    }

    pub fn layout(&self, grid: [usize; 3]) -> WindowLayout {
        WindowLayout::new(grid, self.window, self.shifted)
    }

    /// `(B, h, w, d, C)` → same shape.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let layout = self.layout([x.dim(1), x.dim(2), x.dim(3)]);
        let windows = layout.partition(&self.norm1.forward(x));
        let attended = self.attn.forward(&windows, layout.mask.as_ref());
        let x = x.add(&layout.unpartition(&attended, x.dim(0)));
        let hidden = self.fc1.forward(&self.norm2.forward(&x)).gelu();
        x.add(&self.fc2.forward(&hidden))
    }
}

impl Module for SwinBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }
}

/// Concatenates 2×2×2 neighbourhoods (8C) and projects to 2C. Odd axes are
/// first extended by replicating the last plane.
pub struct PatchMerging {
    pub reduction: Linear,
}

impl PatchMerging {
    pub fn new(init: &mut Init, dim: usize) -> Self {
        PatchMerging { reduction: Linear::new(init, 8 * dim, 2 * dim, false) }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let s = x.shape().to_vec();
        let pads = [(0, 0), (0, s[1] % 2), (0, s[2] % 2), (0, s[3] % 2), (0, 0)];
        let x = x.pad(&pads, PadMode::Replicate);
        let (h, w, d) = (s[1].div_ceil(2), s[2].div_ceil(2), s[3].div_ceil(2));
        let grouped = x
            .reshape(&[s[0], h, 2, w, 2, d, 2, s[4]])
            .permute(&[0, 1, 3, 5, 2, 4, 6, 7])
            .reshape(&[s[0], h, w, d, 8 * s[4]]);
        self.reduction.forward(&grouped)
    }
}

impl Module for PatchMerging {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.reduction.visit(&join(prefix, "reduction"), f);
    }
}

/// Non-overlapping `p³` patches projected through the stem width to the
/// embedding width. Equivalent to a stride-`p` convolution with kernel `p`
/// followed by a pointwise projection.
pub struct PatchEmbed {
    pub stem: Linear,
    pub proj: Linear,
    pub patch: usize,
}

impl PatchEmbed {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Self {
        let p = cfg.patch_size;
        let cin = cfg.num_input_channels_per_modality * p * p * p;
        PatchEmbed {
            stem: Linear::new(init, cin, cfg.conv_stem_channels, true),
            proj: Linear::new(init, cfg.conv_stem_channels, cfg.embed_dim, true),
            patch: p,
        }
    }

    /// `(B, Cin, H, W, D)` → `(B, H/p, W/p, D/p, E)`; axes that are not a
    /// multiple of `p` are zero-padded at the end.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let p = self.patch;
        let s = x.shape().to_vec();
        let pad = |l: usize| l.div_ceil(p) * p - l;
        let x = x.pad(&[(0, 0), (0, 0), (0, pad(s[2])), (0, pad(s[3])), (0, pad(s[4]))], PadMode::Zeros);
        let (h, w, d) = (s[2].div_ceil(p), s[3].div_ceil(p), s[4].div_ceil(p));
        let patches = if p == 1 {
            x.permute(&[0, 2, 3, 4, 1])
        } else {
            x.reshape(&[s[0], s[1], h, p, w, p, d, p])
                .permute(&[0, 2, 4, 6, 1, 3, 5, 7])
                .reshape(&[s[0], h, w, d, s[1] * p * p * p])
        };
        self.proj.forward(&self.stem.forward(&patches))
    }
}

impl Module for PatchEmbed {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.stem.visit(&join(prefix, "stem"), f);
        self.proj.visit(&join(prefix, "proj"), f);
    }
}

/// `depth` alternating regular/shifted blocks followed by patch merging.
pub struct Stage {
    pub blocks: Vec<SwinBlock>,
    pub merge: PatchMerging,
}

impl Module for Stage {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.blocks.visit(&join(prefix, "blocks"), f);
        self.merge.visit(&join(prefix, "merge"), f);
    }
}

/// Stage-0 embedding plus the four stage outputs, all channel-first.
pub struct Pyramid {
    pub embedding: Tensor,
    pub stages: Vec<FeatureMap>,
}

pub struct Encoder {
    pub embed: PatchEmbed,
    pub stages: Vec<Stage>,
}

impl Encoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Self {
        let embed = PatchEmbed::new(init, cfg);
        let stages = (0..4)
            .map(|i| {
                let dim = cfg.embed_dim << i;
                let blocks = (0..cfg.depths[i]).map(|j| SwinBlock::new(init, dim, cfg, j % 2 == 1)).collect();
                Stage { blocks, merge: PatchMerging::new(init, dim) }
            })
            .collect();
        Encoder { embed, stages }
    }

    /// `(B, Cin, H, W, D)` → pyramid.
    pub fn forward(&self, x: &Tensor) -> Pyramid {
        let mut t = self.embed.forward(x);
        let embedding = to_channels_first(&t);
        let mut stages = Vec::with_capacity(4);
        for (i, stage) in self.stages.iter().enumerate() {
            for block in &stage.blocks {
                t = block.forward(&t);
            }
            t = stage.merge.forward(&t);
            stages.push(FeatureMap { tensor: to_channels_first(&t), scale_index: i });
        }
        Pyramid { embedding, stages }
    }
}

impl Module for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.embed.visit(&join(prefix, "patch_embed"), f);
        self.stages.visit(&join(prefix, "stages"), f);
    }
}
