//! Fused scaled dot-product attention over many small windows.
//!
//! Inputs are `(G, heads, n, d)` where `G` runs over (batch × window). The
//! score matrix of one (window, head) pair is materialized only while that
//! pair is processed; the backward pass recomputes it, so memory stays linear
//! in the number of tokens. Under a mask, padding tokens are dropped before
//! the score product, so partly padded windows cost only their real tokens.

use std::rc::Rc;

use crate::linalg::{gemm, MatView};
use crate::reduce::softmax_in_place;
use crate::tensor::{GradFn, Tensor};

/// Learned additive bias looked up per token pair: the bias for head `h`
/// between tokens `i` and `j` is `table[index[i * n + j], h]`.
#[derive(Clone)]
pub struct RelativeBias {
    pub table: Tensor,
    pub index: Rc<Vec<usize>>,
}

/// Per-window token labels restricting which keys a query may see.
///
/// Label `-1` marks a padding token: it is never attended to, and its own
/// output (and gradient) is zero. Other queries attend to keys carrying
/// their own label. Window `g % windows` of the attention batch uses row
/// `g % windows` of the label table.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMask {
    pub windows: usize,
    pub tokens: usize,
    pub labels: Vec<i32>,
}

impl WindowMask {
    #[inline]
    pub fn allowed(&self, window: usize, query: usize, key: usize) -> bool {
        let row = &self.labels[window * self.tokens..(window + 1) * self.tokens];
        let (a, b) = (row[query], row[key]);
        a >= 0 && a == b
    }
}

#[derive(Clone, Copy)]
struct Dims {
    groups: usize,
    heads: usize,
    n: usize,
    dk: usize,
    dv: usize,
}

fn dims(q: &Tensor, k: &Tensor, v: &Tensor) -> Dims {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    assert_eq!(qs.len(), 4, "attention expects (G, heads, n, d), got {qs:?}");
    assert_eq!(qs, ks, "query/key shapes differ");
    assert_eq!(&vs[..3], &qs[..3], "value shape {vs:?} vs query {qs:?}");
    Dims { groups: qs[0], heads: qs[1], n: qs[2], dk: qs[3], dv: vs[3] }
}

/// Real tokens of one window and their labels.
struct Tokens {
    idx: Vec<usize>,
    labels: Option<Vec<i32>>,
}

/// Row-gathers `idx` of an `(n, d)` block into `(idx.len(), d)`.
fn gather(src: &[f64], idx: &[usize], d: usize, dst: &mut Vec<f64>) {
    dst.clear();
    for &i in idx {
        dst.extend_from_slice(&src[i * d..(i + 1) * d]);
    }
}

struct Context<'a> {
    d: Dims,
    scale: f64,
    bias: Option<(&'a [f64], &'a [usize])>,
    mask: Option<&'a WindowMask>,
}

impl Context<'_> {
    fn tokens(&self, g: usize) -> Tokens {
        let n = self.d.n;
        match self.mask {
            None => Tokens { idx: (0..n).collect(), labels: None },
            Some(m) => {
                let w = g % m.windows;
                let row = &m.labels[w * n..(w + 1) * n];
                let idx: Vec<usize> = (0..n).filter(|&i| row[i] >= 0).collect();
                let labels = idx.iter().map(|&i| row[i]).collect::<Vec<_>>();
                let uniform = labels.windows(2).all(|p| p[0] == p[1]);
                Tokens { idx, labels: (!uniform).then_some(labels) }
            }
        }
    }

    /// Probabilities `(r, r)` among the real tokens of one (group, head)
    /// pair, from gathered `qg`, `kg` of shape `(r, dk)`.
    fn probs(&self, h: usize, t: &Tokens, qg: &[f64], kg: &[f64], p: &mut [f64]) {
        let Dims { heads, n, dk, .. } = self.d;
        let r = t.idx.len();
        gemm(r, dk, r, self.scale, qg, MatView::rows(dk), kg, MatView::rows(dk).t(), 0.0, p, MatView::rows(r));
        if let Some((table, index)) = self.bias {
            for (a, &ti) in t.idx.iter().enumerate() {
                let row = &mut p[a * r..(a + 1) * r];
                for (s, &tj) in row.iter_mut().zip(&t.idx) {
                    *s += table[index[ti * n + tj] * heads + h];
                }
            }
        }
        for a in 0..r {
            let row = &mut p[a * r..(a + 1) * r];
            match &t.labels {
                None => softmax_in_place(row),
                Some(l) => masked_softmax(row, l, l[a]),
            }
        }
    }
}

/// Softmax of `row` over keys labelled `a`; other entries become zero.
fn masked_softmax(row: &mut [f64], labels: &[i32], a: i32) {
    let mut max = f64::NEG_INFINITY;
    for (x, &b) in row.iter().zip(labels) {
        if b == a && *x > max {
            max = *x;
        }
    }
    let mut sum = 0.0;
    for (x, &b) in row.iter_mut().zip(labels) {
        if b == a {
            *x = (*x - max).exp();
            sum += *x;
        } else {
            *x = 0.0;
        }
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

struct AttentionFn {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    scale: f64,
    bias: Option<RelativeBias>,
    mask: Option<Rc<WindowMask>>,
}

impl GradFn for AttentionFn {
    fn name(&self) -> &'static str {
        "attention"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.q, &self.k, &self.v];
        if let Some(b) = &self.bias {
            v.push(&b.table);
        }
        v
    }
    fn backward(&self, _out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let d = dims(&self.q, &self.k, &self.v);
        let Dims { groups, heads, n, dk, dv } = d;
        let q = self.q.data();
        let k = self.k.data();
        let v = self.v.data();
        let table = self.bias.as_ref().map(|b| b.table.data());
        let ctx = Context {
            d,
            scale: self.scale,
            bias: table.as_ref().zip(self.bias.as_ref()).map(|(t, b)| (t.as_slice(), b.index.as_slice())),
            mask: self.mask.as_deref(),
        };
        let mut gq = vec![0.0; q.len()];
        let mut gk = vec![0.0; k.len()];
        let mut gv = vec![0.0; v.len()];
        let mut gtable = table.as_ref().map(|t| vec![0.0; t.len()]);
        let (mut qg, mut kg, mut vg, mut og) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut p = vec![0.0; n * n];
        let mut dp = vec![0.0; n * n];
        let mut buf = vec![0.0; n * dk.max(dv)];
        for g in 0..groups {
            let t = ctx.tokens(g);
            let r = t.idx.len();
            if r == 0 {
                continue;
            }
            for h in 0..heads {
                let qo = (g * heads + h) * n * dk;
                let vo = (g * heads + h) * n * dv;
                gather(&q[qo..qo + n * dk], &t.idx, dk, &mut qg);
                gather(&k[qo..qo + n * dk], &t.idx, dk, &mut kg);
                gather(&v[vo..vo + n * dv], &t.idx, dv, &mut vg);
                gather(&grad[vo..vo + n * dv], &t.idx, dv, &mut og);
                ctx.probs(h, &t, &qg, &kg, &mut p);
                // dV = Pᵀ dO ; dP = dO Vᵀ
                gemm(r, r, dv, 1.0, &p, MatView::rows(r).t(), &og, MatView::rows(dv), 0.0, &mut buf, MatView::rows(dv));
                for (a, &ti) in t.idx.iter().enumerate() {
                    gv[vo + ti * dv..vo + (ti + 1) * dv].copy_from_slice(&buf[a * dv..(a + 1) * dv]);
                }
                gemm(r, dv, r, 1.0, &og, MatView::rows(dv), &vg, MatView::rows(dv).t(), 0.0, &mut dp, MatView::rows(r));
                // dS = P ⊙ (dP − rowsum(P ⊙ dP)); masked entries have zero probability.
                for a in 0..r {
                    let pr = &p[a * r..(a + 1) * r];
                    let dr = &mut dp[a * r..(a + 1) * r];
                    let dot: f64 = pr.iter().zip(dr.iter()).map(|(x, y)| x * y).sum();
                    for (y, &x) in dr.iter_mut().zip(pr) {
                        *y = x * (*y - dot);
                    }
                }
                if let (Some(gt), Some(bias)) = (gtable.as_mut(), self.bias.as_ref()) {
                    for (a, &ti) in t.idx.iter().enumerate() {
                        for (b, &tj) in t.idx.iter().enumerate() {
                            gt[bias.index[ti * n + tj] * heads + h] += dp[a * r + b];
                        }
                    }
                }
                gemm(r, r, dk, self.scale, &dp, MatView::rows(r), &kg, MatView::rows(dk), 0.0, &mut buf, MatView::rows(dk));
                for (a, &ti) in t.idx.iter().enumerate() {
                    gq[qo + ti * dk..qo + (ti + 1) * dk].copy_from_slice(&buf[a * dk..(a + 1) * dk]);
                }
                gemm(r, r, dk, self.scale, &dp, MatView::rows(r).t(), &qg, MatView::rows(dk), 0.0, &mut buf, MatView::rows(dk));
                for (a, &ti) in t.idx.iter().enumerate() {
                    gk[qo + ti * dk..qo + (ti + 1) * dk].copy_from_slice(&buf[a * dk..(a + 1) * dk]);
                }
            }
        }
        let mut out = vec![
            self.q.requires_grad().then_some(gq),
            self.k.requires_grad().then_some(gk),
            self.v.requires_grad().then_some(gv),
        ];
        if self.bias.is_some() {
            out.push(gtable);
        }
        out
    }
}

/// `softmax(q kᵀ · scale + bias, masked) · v` for every (group, head).
pub fn attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    scale: f64,
    bias: Option<&RelativeBias>,
    mask: Option<&Rc<WindowMask>>,
) -> Tensor {
    let d = dims(q, k, v);
    check_extras(d, bias, mask);
    let Dims { groups, heads, n, dk, dv } = d;
    let mut out = vec![0.0; groups * heads * n * dv];
    {
        let qd = q.data();
        let kd = k.data();
        let vd = v.data();
        let table = bias.map(|b| b.table.data());
        let ctx = Context {
            d,
            scale,
            bias: table.as_ref().zip(bias).map(|(t, b)| (t.as_slice(), b.index.as_slice())),
            mask: mask.map(|m| m.as_ref()),
        };
        let (mut qg, mut kg, mut vg) = (Vec::new(), Vec::new(), Vec::new());
        let mut p = vec![0.0; n * n];
        let mut og = vec![0.0; n * dv];
        for g in 0..groups {
            let t = ctx.tokens(g);
            let r = t.idx.len();
            if r == 0 {
                continue;
            }
            for h in 0..heads {
                let qo = (g * heads + h) * n * dk;
                let vo = (g * heads + h) * n * dv;
                gather(&qd[qo..qo + n * dk], &t.idx, dk, &mut qg);
                gather(&kd[qo..qo + n * dk], &t.idx, dk, &mut kg);
                gather(&vd[vo..vo + n * dv], &t.idx, dv, &mut vg);
                ctx.probs(h, &t, &qg, &kg, &mut p);
                gemm(r, r, dv, 1.0, &p, MatView::rows(r), &vg, MatView::rows(dv), 0.0, &mut og, MatView::rows(dv));
                for (a, &ti) in t.idx.iter().enumerate() {
                    out[vo + ti * dv..vo + (ti + 1) * dv].copy_from_slice(&og[a * dv..(a + 1) * dv]);
                }
            }
        }
    }
    Tensor::from_op(
        out,
        vec![groups, heads, n, dv],
        AttentionFn {
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
            scale,
            bias: bias.cloned(),
            mask: mask.cloned(),
        },
    )
}

/// The attention probabilities `(G, heads, n, n)` that [`attention`] would
/// use. Rows of padding queries are zero.
pub fn attention_probs(
    q: &Tensor,
    k: &Tensor,
    scale: f64,
    bias: Option<&RelativeBias>,
    mask: Option<&Rc<WindowMask>>,
) -> Vec<f64> {
    let d = dims(q, k, q);
    check_extras(d, bias, mask);
    let Dims { groups, heads, n, dk, .. } = d;
    let qd = q.data();
    let kd = k.data();
    let table = bias.map(|b| b.table.data());
    let ctx = Context {
        d,
        scale,
        bias: table.as_ref().zip(bias).map(|(t, b)| (t.as_slice(), b.index.as_slice())),
        mask: mask.map(|m| m.as_ref()),
    };
    let mut all = vec![0.0; groups * heads * n * n];
    let (mut qg, mut kg) = (Vec::new(), Vec::new());
    let mut p = vec![0.0; n * n];
    for g in 0..groups {
        let t = ctx.tokens(g);
        let r = t.idx.len();
        for h in 0..heads {
            let qo = (g * heads + h) * n * dk;
            gather(&qd[qo..qo + n * dk], &t.idx, dk, &mut qg);
            gather(&kd[qo..qo + n * dk], &t.idx, dk, &mut kg);
            if r > 0 {
                ctx.probs(h, &t, &qg, &kg, &mut p);
            }
            let o = (g * heads + h) * n * n;
            for (a, &ti) in t.idx.iter().enumerate() {
                for (b, &tj) in t.idx.iter().enumerate() {
                    all[o + ti * n + tj] = p[a * r + b];
                }
            }
        }
    }
    all
}

fn check_extras(d: Dims, bias: Option<&RelativeBias>, mask: Option<&Rc<WindowMask>>) {
    if let Some(b) = bias {
        assert_eq!(b.index.len(), d.n * d.n, "bias index must cover n×n pairs");
        assert_eq!(b.table.dim(1), d.heads, "bias table must have one column per head");
        let rows = b.table.dim(0);
        assert!(b.index.iter().all(|&i| i < rows), "bias index out of table range");
    }
    if let Some(m) = mask {
        assert_eq!(m.tokens, d.n, "mask token count");
        assert_eq!(d.groups % m.windows, 0, "attention groups must be a multiple of mask windows");
    }
}
