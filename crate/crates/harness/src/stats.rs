//! Paired comparison of per-patient metrics between two methods.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub n: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p_value: f64,
}

/// Student's paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(HarnessError::Data(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(HarnessError::Data(format!("paired test needs at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(HarnessError::Data("paired samples must be finite".into()));
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    if sd == 0.0 {
        return Err(HarnessError::Data("paired differences have zero variance".into()));
    }
    let t = mean / (sd / nf.sqrt());
    let df = nf - 1.0;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| HarnessError::Data(format!("t distribution: {e}")))?;
    let p_value = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(PairedTTest { n, mean_diff: mean, sd_diff: sd, t, df, p_value })
}
