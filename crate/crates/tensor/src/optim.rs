//! Adam and a reduce-on-plateau learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::archive::{Archive, ArchiveError};
use crate::param::Param;

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction. State is keyed by parameter name, so the
/// optimizer survives rebuilding the model from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    state: BTreeMap<String, Moments>,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam { lr, beta1, beta2, eps: 1e-8, step: 0, state: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that has a gradient.
    pub fn step(&mut self, params: &[(String, Param)]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params {
            let Some(g) = p.grad() else { continue };
            let st = self
                .state
                .entry(name.clone())
                .or_insert_with(|| Moments { m: vec![0.0; g.len()], v: vec![0.0; g.len()] });
            let mut w = p.tensor().data_mut();
            for i in 0..g.len() {
                st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g[i];
                st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = st.m[i] / c1;
                let vhat = st.v[i] / c2;
                w[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    /// Writes moments as `adam.m.<param>` / `adam.v.<param>` plus scalar
    /// settings under metadata key `adam`.
    pub fn write_state(&self, archive: &mut Archive) {
        for (name, st) in &self.state {
            archive.insert(format!("adam.m.{name}"), &[st.m.len()], st.m.clone());
            archive.insert(format!("adam.v.{name}"), &[st.v.len()], st.v.clone());
        }
        let meta = AdamMeta { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps, step: self.step };
        if !archive.metadata.is_object() {
            archive.metadata = serde_json::json!({});
        }
        archive.metadata["adam"] = serde_json::to_value(meta).expect("adam metadata serializes");
    }

    pub fn read_state(archive: &Archive) -> Result<Self, ArchiveError> {
        let meta: AdamMeta = serde_json::from_value(
            archive.metadata.get("adam").cloned().ok_or_else(|| ArchiveError::Missing("adam metadata".into()))?,
        )?;
        let mut state = BTreeMap::new();
        for (key, arr) in &archive.arrays {
            if let Some(name) = key.strip_prefix("adam.m.") {
                let v = archive.get(&format!("adam.v.{name}"))?;
                state.insert(name.to_string(), Moments { m: arr.data.clone(), v: v.data.clone() });
            }
        }
        Ok(Adam { lr: meta.lr, beta1: meta.beta1, beta2: meta.beta2, eps: meta.eps, step: meta.step, state })
    }
}

/// Whether larger or smaller monitored values are better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Min,
    Max,
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// rounds without improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceOnPlateau {
    pub direction: Direction,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: Option<f64>,
    stale_rounds: usize,
}

impl ReduceOnPlateau {
    pub fn new(direction: Direction, factor: f64, patience: usize) -> Self {
        ReduceOnPlateau { direction, factor, patience, min_lr: 1e-6, best: None, stale_rounds: 0 }
    }

    /// Records one monitored value and returns the learning rate to use next.
    pub fn observe(&mut self, value: f64, lr: f64) -> f64 {
        let improved = match (self.best, self.direction) {
            (None, _) => true,
            (Some(b), Direction::Min) => value < b,
            (Some(b), Direction::Max) => value > b,
        };
        if improved {
            self.best = Some(value);
            self.stale_rounds = 0;
            return lr;
        }
        self.stale_rounds += 1;
        if self.stale_rounds > self.patience {
            self.stale_rounds = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}
