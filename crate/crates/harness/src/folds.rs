//! Patient-level k-fold splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_patient_ids: Vec<String>,
    pub test_patient_ids: Vec<String>,
}

/// Shuffles the patients once with `seed` and cuts them into `k` contiguous
/// test blocks whose sizes differ by at most one.
pub fn make_folds(patient_ids: &[String], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(HarnessError::Config(format!("need at least 2 folds, got {k}")));
    }
    if patient_ids.len() < k {
        return Err(HarnessError::Config(format!("{} patients cannot fill {k} folds", patient_ids.len())));
    }
    let mut ids = patient_ids.to_vec();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(HarnessError::Data(format!("duplicate patient id `{}`", w[0])));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    Ok((0..k)
        .map(|i| {
            let (lo, hi) = (i * n / k, (i + 1) * n / k);
            FoldSplit {
                fold_index: i,
                train_patient_ids: ids[..lo].iter().chain(&ids[hi..]).cloned().collect(),
                test_patient_ids: ids[lo..hi].to_vec(),
            }
        })
        .collect())
}

/// Splits training patients into (fit, validation); the last
/// `ceil(fraction · n)` patients are held out, keeping at least one for fitting.
pub fn holdout(train_ids: &[String], fraction: f64) -> (Vec<String>, Vec<String>) {
    let n = train_ids.len();
    let v = ((fraction * n as f64).ceil() as usize).min(n.saturating_sub(1));
    (train_ids[..n - v].to_vec(), train_ids[n - v..].to_vec())
}
