//! Parameterized building blocks.

use fuseg3d_tensor::{conv3d, join, linear, Init, Module, Param, Tensor};

const NORM_EPS: f64 = 1e-5;

/// `x · W + b` over the last axis; `W` is `(in, out)`.
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new(init: &mut Init, cin: usize, cout: usize, bias: bool) -> Self {
        Linear { weight: init.trunc_normal(&[cin, cout], 0.02), bias: bias.then(|| Param::zeros(&[cout])) }
    }

    pub fn zeros(cin: usize, cout: usize, bias: bool) -> Self {
        Linear { weight: Param::zeros(&[cin, cout]), bias: bias.then(|| Param::zeros(&[cout])) }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        linear(x, self.weight.tensor(), self.bias.as_ref().map(|b| b.tensor()))
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Layer normalization over the last axis with affine parameters.
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
}

impl LayerNorm {
    pub fn new(channels: usize) -> Self {
        LayerNorm { gamma: Param::ones(&[channels]), beta: Param::zeros(&[channels]) }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.normalize_last(NORM_EPS).mul(self.gamma.tensor()).add(self.beta.tensor())
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }
}

/// Same-padded stride-1 3D convolution over `(B, C, H, W, D)`.
pub struct Conv3d {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Conv3d {
    pub fn new(init: &mut Init, cin: usize, cout: usize, k: usize, bias: bool) -> Self {
        Conv3d {
            weight: init.he_normal(&[cout, cin, k, k, k], cin * k * k * k),
            bias: bias.then(|| Param::zeros(&[cout])),
        }
    }

    /// Small-variance initialization for gates and output projections.
    pub fn small(init: &mut Init, cin: usize, cout: usize, k: usize, bias: bool) -> Self {
        Conv3d { weight: init.trunc_normal(&[cout, cin, k, k, k], 0.02), bias: bias.then(|| Param::zeros(&[cout])) }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        conv3d(x, self.weight.tensor(), self.bias.as_ref().map(|b| b.tensor()))
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Module for Conv3d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Per-sample, per-channel normalization over the spatial axes of
/// `(B, C, H, W, D)`, with a learned per-channel affine map.
pub struct InstanceNorm {
    pub gamma: Param,
    pub beta: Param,
}

impl InstanceNorm {
    pub fn new(channels: usize) -> Self {
        InstanceNorm { gamma: Param::ones(&[channels, 1]), beta: Param::zeros(&[channels, 1]) }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let s = x.shape().to_vec();
        x.reshape(&[s[0], s[1], usize::MAX])
            .normalize_last(NORM_EPS)
            .mul(self.gamma.tensor())
            .add(self.beta.tensor())
            .reshape(&s)
    }
}

impl Module for InstanceNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }
}

/// `(B, C, H, W, D)` → `(B, H, W, D, C)`.
pub fn to_channels_last(x: &Tensor) -> Tensor {
    x.permute(&[0, 2, 3, 4, 1])
}

/// `(B, H, W, D, C)` → `(B, C, H, W, D)`.
pub fn to_channels_first(x: &Tensor) -> Tensor {
    x.permute(&[0, 4, 1, 2, 3])
}

/// Layer norm over the channel axis of a channel-first map.
pub fn channel_norm(norm: &LayerNorm, x: &Tensor) -> Tensor {
    to_channels_first(&norm.forward(&to_channels_last(x)))
}

/// Pointwise linear map over the channel axis of a channel-first map.
pub fn channel_linear(lin: &Linear, x: &Tensor) -> Tensor {
    to_channels_first(&lin.forward(&to_channels_last(x)))
}
