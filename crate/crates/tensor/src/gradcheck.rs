//! Central finite-difference checks of recorded gradients.
//!
//! The numerical side only ever calls the forward function, so it is
//! independent of every backward rule it checks.

use crate::param::Param;
use crate::tensor::{no_grad, Tensor};

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

impl GradCheckReport {
    fn record(&mut self, label: impl FnOnce() -> String, err: f64) {
        self.checked += 1;
        if err >= self.max_rel_error {
            self.max_rel_error = err;
            self.worst = label();
        }
    }
}

/// Which coordinates of each tensor to probe.
#[derive(Debug, Clone, Copy)]
pub enum Coverage {
    All,
    /// Up to this many evenly spaced coordinates per tensor.
    Sample(usize),
}

fn coordinates(len: usize, coverage: Coverage) -> Vec<usize> {
    match coverage {
        Coverage::All => (0..len).collect(),
        Coverage::Sample(k) if k >= len => (0..len).collect(),
        Coverage::Sample(k) => {
            let mut v: Vec<usize> = (0..k).map(|i| (i * len) / k + (len / k) / 2).collect();
            v.dedup();
            v
        }
    }
}

/// Compares the backward-pass gradient of `loss` w.r.t. every named
/// parameter with central differences of step `h`.
pub fn check_params(
    params: &[(String, Param)],
    loss: &dyn Fn() -> Tensor,
    h: f64,
    floor: f64,
    coverage: Coverage,
) -> GradCheckReport {
    for (_, p) in params {
        p.zero_grad();
    }
    loss().backward();
    let analytic: Vec<Vec<f64>> =
        params.iter().map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()])).collect();
    let eval = || no_grad(|| loss().item());
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: String::new() };
    for ((name, p), grad) in params.iter().zip(&analytic) {
        for i in coordinates(p.numel(), coverage) {
            let orig = p.tensor().data()[i];
            p.tensor().data_mut()[i] = orig + h;
            let up = eval();
            p.tensor().data_mut()[i] = orig - h;
            let down = eval();
            p.tensor().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(grad[i], numeric, floor);
            report.record(|| format!("{name}[{i}]: analytic {} numeric {numeric}", grad[i]), err);
        }
    }
    report
}

/// Directional derivative check along `direction` (one vector per
/// parameter): `∇L·v` against `(L(θ+hv) − L(θ−hv)) / 2h`. Covers every
/// weight at the cost of two forward passes.
pub fn check_direction(
    params: &[(String, Param)],
    direction: &[Vec<f64>],
    loss: &dyn Fn() -> Tensor,
    h: f64,
    floor: f64,
) -> f64 {
    for (_, p) in params {
        p.zero_grad();
    }
    loss().backward();
    let mut analytic = 0.0;
    for ((_, p), d) in params.iter().zip(direction) {
        if let Some(g) = p.grad() {
            analytic += g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let originals: Vec<Vec<f64>> = params.iter().map(|(_, p)| p.values()).collect();
    let shift = |sign: f64| {
        for (((_, p), d), o) in params.iter().zip(direction).zip(&originals) {
            let moved: Vec<f64> = o.iter().zip(d).map(|(x, v)| x + sign * h * v).collect();
            p.set_values(&moved);
        }
    };
    shift(1.0);
    let up = no_grad(|| loss().item());
    shift(-1.0);
    let down = no_grad(|| loss().item());
    for ((_, p), o) in params.iter().zip(&originals) {
        p.set_values(o);
    }
    relative_error(analytic, (up - down) / (2.0 * h), floor)
}

/// Finite-difference check w.r.t. the entries of a leaf input tensor.
pub fn check_input(x: &Tensor, loss: &dyn Fn(&Tensor) -> Tensor, h: f64, floor: f64) -> GradCheckReport {
    x.zero_grad();
    loss(x).backward();
    let grad = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: String::new() };
    for i in 0..x.numel() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let up = no_grad(|| loss(x).item());
        x.data_mut()[i] = orig - h;
        let down = no_grad(|| loss(x).item());
        x.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        report.record(|| format!("input[{i}]: analytic {} numeric {numeric}", grad[i]), relative_error(grad[i], numeric, floor));
    }
    report
}
