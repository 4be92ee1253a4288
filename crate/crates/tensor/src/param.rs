//! Trainable parameters and hierarchical naming.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::shape::numel;
use crate::tensor::Tensor;

/// A trainable leaf tensor. Clones share storage.
#[derive(Clone, Debug)]
pub struct Param(Tensor);

impl Param {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Self {
        Param(Tensor::leaf(data, shape))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(vec![0.0; numel(shape)], shape)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::new(vec![1.0; numel(shape)], shape)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }

    pub fn numel(&self) -> usize {
        self.0.numel()
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.to_vec()
    }

    pub fn set_values(&self, values: &[f64]) {
        let mut d = self.0.data_mut();
        assert_eq!(d.len(), values.len(), "parameter size mismatch");
        d.copy_from_slice(values);
    }

    pub fn fill(&self, value: f64) {
        self.0.data_mut().fill(value);
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad()
    }

    pub fn zero_grad(&self) {
        self.0.zero_grad();
    }
}

/// Anything that owns parameters. `visit` reports each one under a dotted
/// hierarchical name rooted at `prefix`.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
}

/// `prefix.name`, or `name` at the root.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<M: Module> Module for Vec<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<M: Module> Module for Option<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        if let Some(m) = self {
            m.visit(prefix, f);
        }
    }
}

pub fn named_params(m: &dyn Module) -> Vec<(String, Param)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, p| out.push((name.to_string(), p.clone())));
    out
}

pub fn param_count(m: &dyn Module) -> usize {
    let mut n = 0;
    m.visit("", &mut |_, p| n += p.numel());
    n
}

pub fn zero_grads(m: &dyn Module) {
    m.visit("", &mut |_, p| p.zero_grad());
}

/// Seeded parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Normal(0, std) truncated to ±2 std by resampling.
    pub fn trunc_normal(&mut self, shape: &[usize], std: f64) -> Param {
        let data = (0..numel(shape))
            .map(|_| loop {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                if z.abs() <= 2.0 {
                    break z * std;
                }
            })
            .collect();
        Param::new(data, shape)
    }

    /// He-normal for a layer with `fan_in` inputs.
    pub fn he_normal(&mut self, shape: &[usize], fan_in: usize) -> Param {
        self.trunc_normal(shape, (2.0 / fan_in as f64).sqrt())
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Param {
        let data = (0..numel(shape)).map(|_| self.rng.random_range(-bound..=bound)).collect();
        Param::new(data, shape)
    }
}
