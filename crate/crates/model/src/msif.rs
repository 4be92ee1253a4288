//! Multi-scale cross-modal fusion of one encoder stage.
//!
//! Per kernel size: modality-specific convolutions, windowed cross-attention
//! with shared projections, gated combination of the two fused branches and
//! channel-then-spatial attention. The per-kernel maps are then aggregated
//! through independent gates and a pointwise convolution.

use fuseg3d_core::{ModelConfig, MsifConfig};
use fuseg3d_tensor::{attention, attention_probs, concat, join, Init, Module, Param, Tensor};

use crate::backbone::{merge_heads, split_qkv};
use crate::error::{ModelError, Result};
use crate::layers::{to_channels_first, to_channels_last, Conv3d, LayerNorm, Linear};
use crate::window::WindowLayout;

/// Pointwise convolution followed by a sigmoid.
pub struct Gate {
    pub conv: Conv3d,
}

impl Gate {
    pub fn new(init: &mut Init, channels: usize) -> Self {
        Gate { conv: Conv3d::small(init, channels, channels, 1, true) }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.conv.forward(x).sigmoid()
    }
}

impl Module for Gate {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv.visit(&join(prefix, "conv"), f);
    }
}

/// Channel attention from average- and max-pooled descriptors through a
/// shared bottleneck MLP, then spatial attention from channelwise mean and
/// max maps through a single `k³` convolution.
pub struct Cbam {
    pub fc1: Linear,
    pub fc2: Linear,
    pub spatial: Conv3d,
}

impl Cbam {
    pub fn new(init: &mut Init, channels: usize, reduction: usize, spatial_kernel: usize) -> Self {
        let hidden = (channels / reduction).max(1);
        Cbam {
            fc1: Linear::new(init, channels, hidden, true),
            fc2: Linear::new(init, hidden, channels, true),
            spatial: Conv3d::small(init, 2, 1, spatial_kernel, true),
        }
    }

    /// Channel weights `(B, C, 1)`.
    pub fn channel_weights(&self, x: &Tensor) -> Tensor {
        let s = x.shape();
        let flat = x.reshape(&[s[0], s[1], usize::MAX]);
        let mlp = |d: Tensor| self.fc2.forward(&self.fc1.forward(&d.reshape(&[s[0], s[1]])).relu());
        mlp(flat.mean_axis(2)).add(&mlp(flat.max_axis(2))).sigmoid().reshape(&[s[0], s[1], 1])
    }

    /// Spatial weights `(B, 1, H, W, D)`.
    pub fn spatial_weights(&self, x: &Tensor) -> Tensor {
        let pooled = concat(&[x.mean_axis(1), x.max_axis(1)], 1);
        self.spatial.forward(&pooled).sigmoid()
    }

    pub fn channel(&self, x: &Tensor) -> Tensor {
        let s = x.shape().to_vec();
        x.reshape(&[s[0], s[1], usize::MAX]).mul(&self.channel_weights(x)).reshape(&s)
    }

    pub fn spatial(&self, x: &Tensor) -> Tensor {
        x.mul(&self.spatial_weights(x))
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.spatial(&self.channel(x))
    }
}

impl Module for Cbam {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.fc1.visit(&join(prefix, "channel.fc1"), f);
        self.fc2.visit(&join(prefix, "channel.fc2"), f);
        self.spatial.visit(&join(prefix, "spatial"), f);
    }
}

/// Cross-attention parts, present when cross-modal attention is enabled.
pub struct CrossModal {
    pub qkv: Linear,
    pub gate1: Gate,
    pub gate2: Gate,
    pub cbam: Cbam,
}

impl Module for CrossModal {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.qkv.visit(&join(prefix, "qkv"), f);
        self.gate1.visit(&join(prefix, "gate1"), f);
        self.gate2.visit(&join(prefix, "gate2"), f);
        self.cbam.visit(&join(prefix, "cbam"), f);
    }
}

/// Fusion for a single kernel size.
pub struct KernelBranch {
    pub conv_pet: Conv3d,
    pub conv_ct: Conv3d,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub out: Conv3d,
    pub cross: Option<CrossModal>,
}

impl Module for KernelBranch {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv_pet.visit(&join(prefix, "conv_pet"), f);
        self.conv_ct.visit(&join(prefix, "conv_ct"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.out.visit(&join(prefix, "out"), f);
        self.cross.visit(&join(prefix, "cross"), f);
    }
}

/// The two cross-attention outputs in channel-last grid layout.
pub struct CrossAttentionPair {
    pub att1: Tensor,
    pub att2: Tensor,
}

/// Intermediate values of one forward pass, for inspection.
#[derive(Default)]
pub struct MsifTrace {
    /// Softmax weights of every attention call, `(G, heads, n, n)` flattened.
    pub attention_probs: Vec<Vec<f64>>,
    /// Outputs of every gate unit.
    pub gates: Vec<Tensor>,
    /// Channel `(B, C, 1)` and spatial `(B, 1, H, W, D)` attention weights.
    pub channel_weights: Vec<Tensor>,
    pub spatial_weights: Vec<Tensor>,
}

pub struct Msif {
    pub kernels: Vec<usize>,
    pub branches: Vec<KernelBranch>,
    /// Final aggregation: one gate per kernel plus a pointwise convolution.
    pub scale_gates: Option<(Vec<Gate>, Conv3d)>,
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
    pub shifted: bool,
    pub conventional_values: bool,
    pub scale_index: usize,
}

impl Msif {
    pub fn new(init: &mut Init, channels: usize, scale_index: usize, model: &ModelConfig, cfg: &MsifConfig) -> Result<Self> {
        model.validate()?;
        cfg.validate()?;
        if channels % model.num_heads != 0 {
            return Err(ModelError::Fusion(format!("{channels} channels do not split into {} heads", model.num_heads)));
        }
        let kernels = cfg.effective_kernels(model);
        let branches = kernels
            .iter()
            .map(|&k| KernelBranch {
                conv_pet: Conv3d::new(init, channels, channels, k, true),
                conv_ct: Conv3d::new(init, channels, channels, k, true),
                norm1: LayerNorm::new(channels),
                norm2: LayerNorm::new(channels),
                out: Conv3d::new(init, channels, channels, 1, true),
                cross: cfg.cross_modal_attention.then(|| CrossModal {
                    qkv: Linear::new(init, channels, 3 * channels, false),
                    gate1: Gate::new(init, channels),
                    gate2: Gate::new(init, channels),
                    cbam: Cbam::new(init, channels, cfg.reduction_ratio, cfg.spatial_kernel),
                }),
            })
            .collect();
        let scale_gates = cfg.gated_fusion.then(|| {
            let gates = kernels.iter().map(|_| Gate::new(init, channels)).collect();
            (gates, Conv3d::new(init, channels, channels, 1, true))
        });
        Ok(Msif {
            kernels,
            branches,
            scale_gates,
            channels,
            heads: model.num_heads,
            window: model.window_size,
            shifted: cfg.shifted_windows,
            conventional_values: cfg.conventional_values,
            scale_index,
        })
    }

    fn check(&self, f1: &Tensor, f2: &Tensor) -> Result<()> {
        if f1.shape() != f2.shape() {
            return Err(ModelError::Fusion(format!("PET map {:?} and CT map {:?} differ", f1.shape(), f2.shape())));
        }
        if f1.rank() != 5 || f1.dim(1) != self.channels {
            return Err(ModelError::Fusion(format!(
                "expected (B, {}, H, W, D) at scale {}, got {:?}",
                self.channels,
                self.scale_index,
                f1.shape()
            )));
        }
        Ok(())
    }

    pub fn layout(&self, grid: [usize; 3]) -> WindowLayout {
        WindowLayout::new(grid, self.window, self.shifted)
    }

    /// Windowed cross-attention between two channel-first maps with shared
    /// projections. Outputs are channel-last `(B, H, W, D, C)`.
    pub fn cross_attention(&self, cross: &CrossModal, f1: &Tensor, f2: &Tensor, trace: &mut MsifTrace) -> CrossAttentionPair {
        let b = f1.dim(0);
        let layout = self.layout([f1.dim(2), f1.dim(3), f1.dim(4)]);
        let project = |f: &Tensor| split_qkv(&cross.qkv.forward(&layout.partition(&to_channels_last(f))), self.heads);
        let (q1, k1, v1) = project(f1);
        let (q2, k2, v2) = project(f2);
        let scale = 1.0 / (q1.dim(3) as f64).sqrt();
        let mask = layout.mask.as_ref();
        let (va, vb) = if self.conventional_values { (&v2, &v1) } else { (&v1, &v2) };
        let att1 = attention(&q1, &k2, va, scale, None, mask);
        let att2 = attention(&q2, &k1, vb, scale, None, mask);
        trace.attention_probs.push(attention_probs(&q1, &k2, scale, None, mask));
        trace.attention_probs.push(attention_probs(&q2, &k1, scale, None, mask));
        let back = |a: &Tensor| layout.unpartition(&merge_heads(a), b);
        CrossAttentionPair { att1: back(&att1), att2: back(&att2) }
    }

    /// `Conv(gate1(Norm1(Att1 ⊙ F2)) + gate2(Norm2(Att2 ⊙ F1)))`, channel-first.
    pub fn cross_modal_fuse(
        &self,
        br: &KernelBranch,
        cross: &CrossModal,
        att: &CrossAttentionPair,
        f1: &Tensor,
        f2: &Tensor,
        trace: &mut MsifTrace,
    ) -> Tensor {
        let fus1 = to_channels_first(&br.norm1.forward(&att.att1.mul(&to_channels_last(f2))));
        let fus2 = to_channels_first(&br.norm2.forward(&att.att2.mul(&to_channels_last(f1))));
        let g1 = cross.gate1.forward(&fus1);
        let g2 = cross.gate2.forward(&fus2);
        let fused = br.out.forward(&g1.add(&g2));
        trace.gates.push(g1);
        trace.gates.push(g2);
        fused
    }

    fn branch(&self, br: &KernelBranch, pet: &Tensor, ct: &Tensor, trace: &mut MsifTrace) -> Tensor {
        let f1 = br.conv_pet.forward(pet);
        let f2 = br.conv_ct.forward(ct);
        let Some(cross) = &br.cross else {
            let n1 = to_channels_first(&br.norm1.forward(&to_channels_last(&f1)));
            let n2 = to_channels_first(&br.norm2.forward(&to_channels_last(&f2)));
            return br.out.forward(&n1.add(&n2));
        };
        let att = self.cross_attention(cross, &f1, &f2, trace);
        let fused = self.cross_modal_fuse(br, cross, &att, &f1, &f2, trace);
        let cw = cross.cbam.channel_weights(&fused);
        let s = fused.shape().to_vec();
        let after_channel = fused.reshape(&[s[0], s[1], usize::MAX]).mul(&cw).reshape(&s);
        let sw = cross.cbam.spatial_weights(&after_channel);
        trace.channel_weights.push(cw);
        trace.spatial_weights.push(sw.clone());
        after_channel.mul(&sw)
    }

    /// Combines per-kernel maps: `Conv(Σ gate_k(F_k))` with gated fusion,
    /// a plain sum without.
    pub fn aggregate(&self, per_kernel: &[Tensor], trace: &mut MsifTrace) -> Result<Tensor> {
        if per_kernel.len() != self.kernels.len() {
            return Err(ModelError::Fusion(format!("expected {} per-kernel maps, got {}", self.kernels.len(), per_kernel.len())));
        }
        if per_kernel.iter().any(|t| t.shape() != per_kernel[0].shape()) {
            return Err(ModelError::Fusion("per-kernel maps differ in shape".into()));
        }
        let out = match &self.scale_gates {
            Some((gates, conv)) => {
                let mut sum: Option<Tensor> = None;
                for (g, f) in gates.iter().zip(per_kernel) {
                    let gated = g.forward(f);
                    trace.gates.push(gated.clone());
                    sum = Some(match sum {
                        Some(s) => s.add(&gated),
                        None => gated,
                    });
                }
                conv.forward(&sum.expect("at least one kernel"))
            }
            None => per_kernel.iter().cloned().reduce(|a, b| a.add(&b)).expect("at least one kernel"),
        };
        Ok(out)
    }

    pub fn forward(&self, pet: &Tensor, ct: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(pet, ct)?.0)
    }

    pub fn forward_traced(&self, pet: &Tensor, ct: &Tensor) -> Result<(Tensor, MsifTrace)> {
        self.check(pet, ct)?;
        let mut trace = MsifTrace::default();
        let per_kernel: Vec<Tensor> = self.branches.iter().map(|br| self.branch(br, pet, ct, &mut trace)).collect();
        let out = self.aggregate(&per_kernel, &mut trace)?;
        Ok((out, trace))
    }

    /// Copies every PET-side weight onto its CT-side counterpart, making the
    /// module symmetric under exchange of the two inputs.
    pub fn tie_modality_weights(&self) {
        for br in &self.branches {
            br.conv_ct.weight.set_values(&br.conv_pet.weight.values());
            if let (Some(a), Some(b)) = (&br.conv_pet.bias, &br.conv_ct.bias) {
                b.set_values(&a.values());
            }
            br.norm2.gamma.set_values(&br.norm1.gamma.values());
            br.norm2.beta.set_values(&br.norm1.beta.values());
            if let Some(c) = &br.cross {
                c.gate2.conv.weight.set_values(&c.gate1.conv.weight.values());
                if let (Some(a), Some(b)) = (&c.gate1.conv.bias, &c.gate2.conv.bias) {
                    b.set_values(&a.values());
                }
            }
        }
    }
}

impl Module for Msif {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.branches.visit(&join(prefix, "branches"), f);
        if let Some((gates, conv)) = &self.scale_gates {
            gates.visit(&join(prefix, "scale_gates"), f);
            conv.visit(&join(prefix, "aggregate"), f);
        }
    }
}
