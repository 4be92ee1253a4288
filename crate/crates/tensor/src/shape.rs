//! Shape arithmetic and layout-changing operations.

use crate::tensor::{GradFn, Tensor};

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes (aligned from the right).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    (0..rank)
        .map(|i| {
            let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
            let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
            match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => panic!("shapes {a:?} and {b:?} do not broadcast"),
            }
        })
        .collect()
}

/// For every element of `out_shape`, the flat index of the element of
/// `in_shape` it reads under broadcasting.
pub(crate) fn broadcast_index(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - in_shape.len();
    let in_strides = strides(in_shape);
    let eff: Vec<usize> = (0..rank)
        .map(|i| {
            if i < offset || in_shape[i - offset] == 1 {
                0
            } else {
                in_strides[i - offset]
            }
        })
        .collect();
    let n = numel(out_shape);
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut cur = 0usize;
    for _ in 0..n {
        idx.push(cur);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            cur += eff[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            cur -= eff[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    idx
}

/// Copies `src` (laid out as `shape`) into axis order `perm`.
pub(crate) fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let src_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let eff: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let n = src.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    if rank == 0 {
        out.push(src[0]);
        return out;
    }
    // The innermost output axis is copied in a tight loop.
    let inner = out_shape[rank - 1];
    let inner_stride = eff[rank - 1];
    let outer_rank = rank - 1;
    let mut counter = vec![0usize; outer_rank];
    let mut base = 0usize;
    for _ in 0..n / inner {
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner]);
        } else {
            let mut p = base;
            for _ in 0..inner {
                out.push(src[p]);
                p += inner_stride;
            }
        }
        for ax in (0..outer_rank).rev() {
            counter[ax] += 1;
            base += eff[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            base -= eff[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    out
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

struct ReshapeFn {
    input: Tensor,
}

impl GradFn for ReshapeFn {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }
    fn backward(&self, _out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad.to_vec())]
    }
}

struct PermuteFn {
    input: Tensor,
    perm: Vec<usize>,
    out_shape: Vec<usize>,
}

impl GradFn for PermuteFn {
    fn name(&self) -> &'static str {
        "permute"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }
    fn backward(&self, _out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let inv = inverse_perm(&self.perm);
        vec![Some(permute_data(grad, &self.out_shape, &inv))]
    }
}

/// How `pad` fills new elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zeros,
    /// Repeat the edge element.
    Replicate,
}

struct PadFn {
    input: Tensor,
    pads: Vec<(usize, usize)>,
    mode: PadMode,
}

impl GradFn for PadFn {
    fn name(&self) -> &'static str {
        "pad"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }
    fn backward(&self, _out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let in_shape = self.input.shape();
        let map = pad_source_index(in_shape, &self.pads, self.mode);
        let mut g = vec![0.0; numel(in_shape)];
        for (o, src) in map.iter().enumerate() {
            if let Some(s) = src {
                g[*s] += grad[o];
            }
        }
        vec![Some(g)]
    }
}

fn padded_shape(shape: &[usize], pads: &[(usize, usize)]) -> Vec<usize> {
    shape.iter().zip(pads).map(|(d, (a, b))| d + a + b).collect()
}

/// For each output element of a pad, the input element it copies (if any).
fn pad_source_index(shape: &[usize], pads: &[(usize, usize)], mode: PadMode) -> Vec<Option<usize>> {
    let out_shape = padded_shape(shape, pads);
    let in_strides = strides(shape);
    let rank = shape.len();
    let n = numel(&out_shape);
    let mut map = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    for _ in 0..n {
        let mut flat = 0usize;
        let mut valid = true;
        for ax in 0..rank {
            let c = counter[ax] as isize - pads[ax].0 as isize;
            let d = shape[ax] as isize;
            let c = if c < 0 || c >= d {
                match mode {
                    PadMode::Zeros => {
                        valid = false;
                        break;
                    }
                    PadMode::Replicate => c.clamp(0, d - 1),
                }
            } else {
                c
            };
            flat += c as usize * in_strides[ax];
        }
        map.push(if valid { Some(flat) } else { None });
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            if counter[ax] < out_shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    map
}

struct NarrowFn {
    input: Tensor,
    axis: usize,
    start: usize,
}

impl GradFn for NarrowFn {
    fn name(&self) -> &'static str {
        "narrow"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }
    fn backward(&self, _out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let shape = self.input.shape();
        let outer: usize = shape[..self.axis].iter().product();
        let inner: usize = shape[self.axis + 1..].iter().product();
        let len = grad.len() / (outer * inner);
        let mut g = vec![0.0; self.input.numel()];
        for o in 0..outer {
            let src = &grad[o * len * inner..(o + 1) * len * inner];
            let dst_start = (o * shape[self.axis] + self.start) * inner;
            g[dst_start..dst_start + len * inner].copy_from_slice(src);
        }
        vec![Some(g)]
    }
}

struct ConcatFn {
    inputs: Vec<Tensor>,
    axis: usize,
}

impl GradFn for ConcatFn {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        self.inputs.iter().collect()
    }
    fn backward(&self, _out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let shape = self.inputs[0].shape();
        let outer: usize = shape[..self.axis].iter().product();
        let inner: usize = shape[self.axis + 1..].iter().product();
        let total: usize = self.inputs.iter().map(|t| t.dim(self.axis)).sum();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(self.inputs.len());
        for t in &self.inputs {
            let len = t.dim(self.axis);
            if !t.requires_grad() {
                grads.push(None);
                offset += len;
                continue;
            }
            let mut g = Vec::with_capacity(t.numel());
            for o in 0..outer {
                let s = (o * total + offset) * inner;
                g.extend_from_slice(&grad[s..s + len * inner]);
            }
            grads.push(Some(g));
            offset += len;
        }
        grads
    }
}

struct RollFn {
    input: Tensor,
    shifts: Vec<isize>,
}

impl GradFn for RollFn {
    fn name(&self) -> &'static str {
        "roll"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }
    fn backward(&self, _out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let back: Vec<isize> = self.shifts.iter().map(|s| -s).collect();
        vec![Some(roll_data(grad, self.input.shape(), &back))]
    }
}

/// `out[(i + shift) mod n] = src[i]` along every axis.
fn roll_data(src: &[f64], shape: &[usize], shifts: &[isize]) -> Vec<f64> {
    let rank = shape.len();
    let st = strides(shape);
    let n = src.len();
    let mut out = vec![0.0; n];
    let mut counter = vec![0usize; rank];
    for &v in src.iter() {
        let mut flat = 0usize;
        for ax in 0..rank {
            let d = shape[ax] as isize;
            let c = (counter[ax] as isize + shifts[ax]).rem_euclid(d);
            flat += c as usize * st[ax];
        }
        out[flat] = v;
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            if counter[ax] < shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    out
}

impl Tensor {
    /// Reinterprets the buffer with a new shape of equal size. One entry may
    /// be `usize::MAX` to infer it.
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let mut shape = shape.to_vec();
        if let Some(pos) = shape.iter().position(|&d| d == usize::MAX) {
            let known: usize = shape.iter().filter(|&&d| d != usize::MAX).product();
            shape[pos] = self.numel() / known;
        }
        assert_eq!(
            numel(&shape),
            self.numel(),
            "cannot reshape {:?} to {:?}",
            self.shape(),
            shape
        );
        Tensor::from_op(self.to_vec(), shape, ReshapeFn { input: self.clone() })
    }

    pub fn permute(&self, perm: &[usize]) -> Tensor {
        assert_eq!(perm.len(), self.rank(), "permutation rank");
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            assert!(p < perm.len() && !seen[p], "invalid permutation {perm:?}");
            seen[p] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let data = permute_data(&self.data(), self.shape(), perm);
        Tensor::from_op(
            data,
            out_shape.clone(),
            PermuteFn { input: self.clone(), perm: perm.to_vec(), out_shape },
        )
    }

    /// Pads every axis by `(before, after)` elements.
    pub fn pad(&self, pads: &[(usize, usize)], mode: PadMode) -> Tensor {
        assert_eq!(pads.len(), self.rank());
        if pads.iter().all(|&(a, b)| a == 0 && b == 0) {
            return self.clone();
        }
        let out_shape = padded_shape(self.shape(), pads);
        let map = pad_source_index(self.shape(), pads, mode);
        let src = self.data();
        let data: Vec<f64> = map.iter().map(|m| m.map_or(0.0, |i| src[i])).collect();
        drop(src);
        Tensor::from_op(data, out_shape, PadFn { input: self.clone(), pads: pads.to_vec(), mode })
    }

    /// Keeps `len` entries of `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        let shape = self.shape();
        assert!(start + len <= shape[axis], "narrow out of range on {:?}", shape);
        if start == 0 && len == shape[axis] {
            return self.clone();
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[s..s + len * inner]);
        }
        drop(src);
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        Tensor::from_op(data, out_shape, NarrowFn { input: self.clone(), axis, start })
    }

    /// Crops leading entries so each axis has at most `dims[i]` elements.
    pub fn crop_to(&self, dims: &[usize]) -> Tensor {
        let mut t = self.clone();
        for (axis, &d) in dims.iter().enumerate() {
            if t.dim(axis) != d {
                t = t.narrow(axis, 0, d);
            }
        }
        t
    }

    /// Cyclic shift by `shifts[axis]` along every axis.
    pub fn roll(&self, shifts: &[isize]) -> Tensor {
        assert_eq!(shifts.len(), self.rank());
        if shifts.iter().all(|&s| s == 0) {
            return self.clone();
        }
        let data = roll_data(&self.data(), self.shape(), shifts);
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            RollFn { input: self.clone(), shifts: shifts.to_vec() },
        )
    }
}

/// Concatenates tensors that agree on every axis except `axis`.
pub fn concat(tensors: &[Tensor], axis: usize) -> Tensor {
    assert!(!tensors.is_empty());
    let first = tensors[0].shape();
    for t in tensors {
        assert_eq!(t.rank(), first.len());
        for ax in 0..first.len() {
            if ax != axis {
                assert_eq!(t.dim(ax), first[ax], "concat shape mismatch on axis {ax}");
            }
        }
    }
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let total: usize = tensors.iter().map(|t| t.dim(axis)).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    let bufs: Vec<_> = tensors.iter().map(|t| t.data()).collect();
    for o in 0..outer {
        for (t, buf) in tensors.iter().zip(&bufs) {
            let len = t.dim(axis) * inner;
            data.extend_from_slice(&buf[o * len..(o + 1) * len]);
        }
    }
    drop(bufs);
    let mut shape = first.to_vec();
    shape[axis] = total;
    Tensor::from_op(data, shape, ConcatFn { inputs: tensors.to_vec(), axis })
}
