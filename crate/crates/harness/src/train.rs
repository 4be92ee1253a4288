//! Adam + Dice training over depth windows with validation-driven learning
//! rate decay, early stopping and resumable checkpoints.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use fuseg3d_core::metrics::confusion_slices;
use fuseg3d_core::Volume3D;
use fuseg3d_model::{soft_dice_loss, SegmentationModel};
use fuseg3d_tensor::{Adam, Direction, ReduceOnPlateau, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::TrainConfig;
use crate::dataset::Case;
use crate::error::{HarnessError, Result};
use crate::evaluate::{evaluate, EvalSettings};
use crate::prefetch::Prefetcher;
use crate::windows::sliding_windows;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    /// DSC of the thresholded prediction on the step's own batch, before
    /// the update.
    pub train_dsc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: u64,
    pub dsc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub steps: Vec<StepRecord>,
    pub validations: Vec<ValidationRecord>,
}

impl History {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    EarlyStop,
    TargetReached,
}

/// Loop state that survives a checkpoint round trip alongside the weights
/// and the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub step: u64,
    pub plateau: ReduceOnPlateau,
    pub best_val_dsc: Option<f64>,
    pub best_step: Option<u64>,
    pub stale_validations: usize,
    pub history: History,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Receives `best.ckpt` (best validation DSC) and `last.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop once a step's training DSC reaches this value.
    pub target_train_dsc: Option<f64>,
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub stop: StopReason,
    pub state: LoopState,
}

struct Batch {
    pet: Vec<f64>,
    ct: Vec<f64>,
    gt: Vec<f64>,
    shape: [usize; 5],
}

/// One training window: case index and start slice.
type Slot = (usize, usize);

fn slots(cases: &[Case], depth: usize) -> Result<Vec<Slot>> {
    let mut out = Vec::new();
    for (i, c) in cases.iter().enumerate() {
        c.mask()?;
        for w in sliding_windows(&c.pet, depth, depth)? {
            out.push((i, w.offset));
        }
    }
    if out.is_empty() {
        return Err(HarnessError::Data("no training windows".into()));
    }
    Ok(out)
}

/// Window indices for `step`: consecutive draws from per-epoch shuffles
/// seeded by `(seed, epoch)`, so any step can be reproduced in isolation.
pub fn batch_indices(n: usize, step: u64, batch: usize, seed: u64) -> Vec<usize> {
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..batch as u64)
        .map(|j| {
            let k = step * batch as u64 + j;
            let epoch = k / n as u64;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
                cached = Some((epoch, perm));
            }
            cached.as_ref().unwrap().1[(k % n as u64) as usize]
        })
        .collect()
}

fn window_data(v: &Volume3D, offset: usize, depth: usize) -> Result<Vec<f64>> {
    let d = v.dims()[2];
    let w = if d < depth {
        crate::windows::sliding_windows(v, depth, depth)?.remove(0).volume
    } else {
        v.depth_range(offset, depth)?
    };
    Ok(w.into_data())
}

fn make_batch(cases: &[Case], picks: &[Slot], depth: usize) -> Result<Batch> {
    let [h, w, _] = cases[picks[0].0].pet.dims();
    let mut b = Batch { pet: Vec::new(), ct: Vec::new(), gt: Vec::new(), shape: [picks.len(), 1, h, w, depth] };
    for &(ci, off) in picks {
        let c = &cases[ci];
        if c.pet.dims()[..2] != [h, w] {
            return Err(HarnessError::Data(format!("{}: in-plane grid differs from the rest of the batch", c.id)));
        }
        b.pet.extend(window_data(&c.pet, off, depth)?);
        b.ct.extend(window_data(&c.ct, off, depth)?);
        b.gt.extend(window_data(c.mask()?, off, depth)?);
    }
    Ok(b)
}

fn batch_dsc(prob: &[f64], gt: &[f64], threshold: f64) -> Result<f64> {
    let pred: Vec<f64> = prob.iter().map(|&p| if p > threshold { 1.0 } else { 0.0 }).collect();
    Ok(confusion_slices(&pred, gt)?.dsc())
}

pub struct Trainer<'m> {
    pub model: &'m SegmentationModel,
    pub cfg: TrainConfig,
    pub adam: Adam,
    pub state: LoopState,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m SegmentationModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(cfg.lr, cfg.beta1, cfg.beta2);
        let state = LoopState {
            step: 0,
            plateau: ReduceOnPlateau::new(Direction::Max, cfg.plateau_factor, cfg.plateau_patience),
            best_val_dsc: None,
            best_step: None,
            stale_validations: 0,
            history: History::default(),
        };
        Ok(Trainer { model, cfg, adam, state })
    }

    /// Continues from an optimizer and the `train_state` stored in a
    /// checkpoint's extra metadata.
    pub fn resume(model: &'m SegmentationModel, cfg: TrainConfig, adam: Adam, extra: &serde_json::Value) -> Result<Self> {
        cfg.validate()?;
        let state = serde_json::from_value(extra.get("train_state").cloned().unwrap_or_default())
            .map_err(|e| HarnessError::Data(format!("checkpoint has no usable train_state: {e}")))?;
        Ok(Trainer { model, cfg, adam, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let extra = json!({ "train_state": self.state, "train": self.cfg });
        Ok(self.model.save(path, Some(&self.adam), extra)?)
    }

    fn checkpoint(&self, opts: &TrainOptions, name: &str) -> Result<()> {
        if let Some(dir) = &opts.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
            self.save(&dir.join(name))?;
        }
        Ok(())
    }

    /// One optimizer step on a batch; returns (loss, training DSC).
    fn step(&mut self, b: &Batch) -> Result<(f64, f64)> {
        let params = self.model.params();
        for (_, p) in &params {
            p.zero_grad();
        }
        let pet = Tensor::new(b.pet.clone(), &b.shape);
        let ct = Tensor::new(b.ct.clone(), &b.shape);
        let gt = Tensor::new(b.gt.clone(), &b.shape);
        let prob = self.model.forward(&pet, &ct)?;
        let loss = soft_dice_loss(&prob, &gt, self.cfg.loss_epsilon);
        let value = loss.item();
        if !value.is_finite() {
            return Err(HarnessError::Numerical(format!(
                "loss is {value} at step {} (lr {:e}); lower the learning rate or check the inputs",
                self.state.step, self.adam.lr
            )));
        }
        let dsc = batch_dsc(&prob.to_vec(), &b.gt, self.cfg.threshold)?;
        loss.backward();
        self.adam.step(&params);
        Ok((value, dsc))
    }

    fn validate(&mut self, val: &[&Case], opts: &TrainOptions) -> Result<bool> {
        let settings = EvalSettings { depth: self.cfg.window_depth, stride: self.cfg.stride(), threshold: self.cfg.threshold, fold: 0 };
        let dsc = evaluate(self.model, val, &settings)?.mean_dsc();
        let s = &mut self.state;
        s.history.validations.push(ValidationRecord { step: s.step, dsc });
        self.adam.lr = s.plateau.observe(dsc, self.adam.lr);
        if opts.verbose {
            eprintln!("step {:>6}  val DSC {dsc:.4}  lr {:.2e}", s.step, self.adam.lr);
        }
        if s.best_val_dsc.is_none_or(|b| dsc > b) {
            s.best_val_dsc = Some(dsc);
            s.best_step = Some(s.step);
            s.stale_validations = 0;
            self.checkpoint(opts, "best.ckpt")?;
        } else {
            s.stale_validations += 1;
        }
        Ok(self.state.stale_validations >= self.cfg.early_stop_patience)
    }

    /// Trains until `cfg.max_steps`, early stopping, or the training DSC
    /// target. Validation runs every `val_every` steps when `val` is
    /// non-empty, and once more on the final step if that was skipped.
    pub fn run(&mut self, train: &[Case], val: &[&Case], opts: &TrainOptions) -> Result<TrainOutcome> {
        let depth = self.cfg.window_depth;
        let slots = slots(train, depth)?;
        let cases = Arc::new(train.to_vec());
        let (start, end) = (self.state.step, self.cfg.max_steps);
        let (batch, seed) = (self.cfg.batch_size, self.cfg.seed);
        let producer = {
            let cases = Arc::clone(&cases);
            (start..end).map(move |s| {
                let picks: Vec<Slot> = batch_indices(slots.len(), s, batch, seed).into_iter().map(|i| slots[i]).collect();
                make_batch(&cases, &picks, depth)
            })
        };
        let mut stop = StopReason::MaxSteps;
        for b in Prefetcher::spawn(self.cfg.prefetch, producer) {
            let lr = self.adam.lr;
            let (loss, train_dsc) = self.step(&b?)?;
            self.state.history.steps.push(StepRecord { step: self.state.step, loss, train_dsc, lr });
            self.state.step += 1;
            if opts.verbose && self.state.step % 10 == 0 {
                eprintln!("step {:>6}  loss {loss:.5}  train DSC {train_dsc:.4}", self.state.step);
            }
            if opts.target_train_dsc.is_some_and(|t| train_dsc >= t) {
                stop = StopReason::TargetReached;
                break;
            }
            if !val.is_empty() && self.state.step % self.cfg.val_every == 0 && self.validate(val, opts)? {
                stop = StopReason::EarlyStop;
                break;
            }
        }
        let validated = self.state.history.validations.last().is_some_and(|v| v.step == self.state.step);
        if !val.is_empty() && !validated && self.state.step > start {
            self.validate(val, opts)?;
        }
        if self.state.best_val_dsc.is_none() {
            self.checkpoint(opts, "best.ckpt")?;
        }
        self.checkpoint(opts, "last.ckpt")?;
        Ok(TrainOutcome { stop, state: self.state.clone() })
    }
}
