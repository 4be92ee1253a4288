//! Reductions, softmax and row normalization.

use crate::tensor::{GradFn, Tensor};

/// (outer, len, inner) view of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

fn keepdim_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

struct SumAllFn {
    input: Tensor,
    scale: f64,
}

impl GradFn for SumAllFn {
    fn name(&self) -> &'static str {
        "sum_all"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }
    fn backward(&self, _out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![grad[0] * self.scale; self.input.numel()])]
    }
}

struct AxisSumFn {
    input: Tensor,
    axis: usize,
    scale: f64,
}

impl GradFn for AxisSumFn {
    fn name(&self) -> &'static str {
        "sum_axis"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }
    fn backward(&self, _out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (outer, len, inner) = split_axis(self.input.shape(), self.axis);
        let mut g = vec![0.0; outer * len * inner];
        for o in 0..outer {
            for l in 0..len {
                let dst = &mut g[(o * len + l) * inner..(o * len + l + 1) * inner];
                let src = &grad[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s * self.scale;
                }
            }
        }
        vec![Some(g)]
    }
}

struct AxisMaxFn {
    input: Tensor,
    argmax: Vec<usize>,
}

impl GradFn for AxisMaxFn {
    fn name(&self) -> &'static str {
        "max_axis"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }
    fn backward(&self, _out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut g = vec![0.0; self.input.numel()];
        for (o, &src) in self.argmax.iter().enumerate() {
            g[src] += grad[o];
        }
        vec![Some(g)]
    }
}

struct SoftmaxFn {
    input: Tensor,
}

impl GradFn for SoftmaxFn {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }
    fn backward(&self, out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let len = *self.input.shape().last().unwrap();
        let mut g = vec![0.0; out.len()];
        for ((y, gy), gx) in out.chunks(len).zip(grad.chunks(len)).zip(g.chunks_mut(len)) {
            let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
            for i in 0..len {
                gx[i] = y[i] * (gy[i] - dot);
            }
        }
        vec![Some(g)]
    }
}

/// Softmax of one row in place, with max subtraction.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

struct NormalizeFn {
    input: Tensor,
    rstd: Vec<f64>,
}

impl GradFn for NormalizeFn {
    fn name(&self) -> &'static str {
        "normalize_last"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }
    fn backward(&self, out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let len = *self.input.shape().last().unwrap();
        let n = len as f64;
        let mut g = vec![0.0; out.len()];
        for (r, ((xhat, gy), gx)) in
            out.chunks(len).zip(grad.chunks(len)).zip(g.chunks_mut(len)).enumerate()
        {
            let mean_g: f64 = gy.iter().sum::<f64>() / n;
            let mean_gx: f64 = gy.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
            let rstd = self.rstd[r];
            for i in 0..len {
                gx[i] = rstd * (gy[i] - mean_g - xhat[i] * mean_gx);
            }
        }
        vec![Some(g)]
    }
}

impl Tensor {
    /// Sum of all elements as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(vec![s], vec![], SumAllFn { input: self.clone(), scale: 1.0 })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(vec![s / n], vec![], SumAllFn { input: self.clone(), scale: 1.0 / n })
    }

    /// Sum over `axis`, keeping it with length 1.
    pub fn sum_axis(&self, axis: usize) -> Tensor {
        self.axis_sum(axis, 1.0)
    }

    /// Mean over `axis`, keeping it with length 1.
    pub fn mean_axis(&self, axis: usize) -> Tensor {
        let len = self.dim(axis) as f64;
        self.axis_sum(axis, 1.0 / len)
    }

    fn axis_sum(&self, axis: usize, scale: f64) -> Tensor {
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let src = self.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut data[o * inner..(o + 1) * inner];
            for l in 0..len {
                let row = &src[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in dst.iter_mut().zip(row) {
                    *d += s;
                }
            }
            for d in dst.iter_mut() {
                *d *= scale;
            }
        }
        drop(src);
        Tensor::from_op(
            data,
            keepdim_shape(self.shape(), axis),
            AxisSumFn { input: self.clone(), axis, scale },
        )
    }

    /// Maximum over `axis`, keeping it with length 1. Ties route the gradient
    /// to the first maximal entry.
    pub fn max_axis(&self, axis: usize) -> Tensor {
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let src = self.data();
        let mut data = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    let v = src[base + i];
                    if v > data[o * inner + i] || l == 0 {
                        data[o * inner + i] = v;
                        argmax[o * inner + i] = base + i;
                    }
                }
            }
        }
        drop(src);
        Tensor::from_op(
            data,
            keepdim_shape(self.shape(), axis),
            AxisMaxFn { input: self.clone(), argmax },
        )
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&self) -> Tensor {
        let len = *self.shape().last().expect("softmax on a scalar");
        let mut data = self.to_vec();
        for row in data.chunks_mut(len) {
            softmax_in_place(row);
        }
        Tensor::from_op(data, self.shape().to_vec(), SoftmaxFn { input: self.clone() })
    }

    /// Zero-mean, unit-variance (biased variance) over the last axis.
    pub fn normalize_last(&self, eps: f64) -> Tensor {
        let len = *self.shape().last().expect("normalize on a scalar");
        let n = len as f64;
        let mut data = self.to_vec();
        let mut rstd = Vec::with_capacity(data.len() / len.max(1));
        for row in data.chunks_mut(len) {
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let r = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            rstd.push(r);
        }
        Tensor::from_op(data, self.shape().to_vec(), NormalizeFn { input: self.clone(), rstd })
    }
}
