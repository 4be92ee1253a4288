//! Matrix products.

use crate::tensor::{GradFn, Tensor};

/// Row-major view of a matrix inside a slice: element (i, j) lives at
/// `i * rs + j * cs`. Transposition is a swap of the two strides.
#[derive(Clone, Copy)]
pub struct MatView {
    pub rs: isize,
    pub cs: isize,
}

impl MatView {
    pub fn rows(cols: usize) -> Self {
        MatView { rs: cols as isize, cs: 1 }
    }
    pub fn t(self) -> Self {
        MatView { rs: self.cs, cs: self.rs }
    }
}

/// `c = alpha * a(m×k) · b(k×n) + beta * c`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    av: MatView,
    b: &[f64],
    bv: MatView,
    beta: f64,
    c: &mut [f64],
    cv: MatView,
) {
    if m == 0 || n == 0 {
        return;
    }
    let extent = |v: MatView, r: usize, cc: usize| {
        (r.saturating_sub(1)) as isize * v.rs + (cc.saturating_sub(1)) as isize * v.cs
    };
    assert!(k == 0 || (extent(av, m, k) as usize) < a.len(), "gemm: lhs out of bounds");
    assert!(k == 0 || (extent(bv, k, n) as usize) < b.len(), "gemm: rhs out of bounds");
    assert!((extent(cv, m, n) as usize) < c.len(), "gemm: output out of bounds");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            av.rs,
            av.cs,
            b.as_ptr(),
            bv.rs,
            bv.cs,
            beta,
            c.as_mut_ptr(),
            cv.rs,
            cv.cs,
        );
    }
}

struct MatmulFn {
    a: Tensor,
    b: Tensor,
}

impl MatmulFn {
    fn dims(&self) -> (usize, usize, usize, usize, bool) {
        let sa = self.a.shape();
        let sb = self.b.shape();
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];
        let batch: usize = sa[..sa.len() - 2].iter().product();
        (batch, m, k, n, sb.len() == 2)
    }
}

impl GradFn for MatmulFn {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.a, &self.b]
    }
    fn backward(&self, _out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (batch, m, k, n, shared_b) = self.dims();
        let a = self.a.data();
        let b = self.b.data();
        let ga = self.a.requires_grad().then(|| {
            let mut ga = vec![0.0; a.len()];
            if shared_b {
                // (batch*m × n) · (n × k)
                gemm(batch * m, n, k, 1.0, grad, MatView::rows(n), &b, MatView::rows(n).t(), 0.0, &mut ga, MatView::rows(k));
            } else {
                for i in 0..batch {
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        &grad[i * m * n..],
                        MatView::rows(n),
                        &b[i * k * n..],
                        MatView::rows(n).t(),
                        0.0,
                        &mut ga[i * m * k..],
                        MatView::rows(k),
                    );
                }
            }
            ga
        });
        let gb = self.b.requires_grad().then(|| {
            let mut gb = vec![0.0; b.len()];
            if shared_b {
                gemm(k, batch * m, n, 1.0, &a, MatView::rows(k).t(), grad, MatView::rows(n), 0.0, &mut gb, MatView::rows(n));
            } else {
                for i in 0..batch {
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        &a[i * m * k..],
                        MatView::rows(k).t(),
                        &grad[i * m * n..],
                        MatView::rows(n),
                        0.0,
                        &mut gb[i * k * n..],
                        MatView::rows(n),
                    );
                }
            }
            gb
        });
        vec![ga, gb]
    }
}

struct LinearFn {
    x: Tensor,
    w: Tensor,
    b: Option<Tensor>,
}

impl GradFn for LinearFn {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.x, &self.w];
        if let Some(b) = &self.b {
            v.push(b);
        }
        v
    }
    fn backward(&self, _out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (cin, cout) = (self.w.dim(0), self.w.dim(1));
        let rows = self.x.numel() / cin;
        let gx = self.x.requires_grad().then(|| {
            let w = self.w.data();
            let mut gx = vec![0.0; rows * cin];
            gemm(rows, cout, cin, 1.0, grad, MatView::rows(cout), &w, MatView::rows(cout).t(), 0.0, &mut gx, MatView::rows(cin));
            gx
        });
        let gw = self.w.requires_grad().then(|| {
            let x = self.x.data();
            let mut gw = vec![0.0; cin * cout];
            gemm(cin, rows, cout, 1.0, &x, MatView::rows(cin).t(), grad, MatView::rows(cout), 0.0, &mut gw, MatView::rows(cout));
            gw
        });
        let mut out = vec![gx, gw];
        if let Some(b) = &self.b {
            out.push(b.requires_grad().then(|| {
                let mut gb = vec![0.0; cout];
                for row in grad.chunks(cout) {
                    for (g, r) in gb.iter_mut().zip(row) {
                        *g += r;
                    }
                }
                gb
            }));
        }
        out
    }
}

impl Tensor {
    /// Batched matrix product. `self` is `(..., m, k)`; `other` is either
    /// `(..., k, n)` with the same leading dims or a shared `(k, n)` matrix.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let sa = self.shape();
        let sb = other.shape();
        assert!(sa.len() >= 2 && sb.len() >= 2, "matmul needs matrices");
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        assert_eq!(k, kb, "matmul inner dims {sa:?} x {sb:?}");
        let shared_b = sb.len() == 2;
        if !shared_b {
            assert_eq!(sa[..sa.len() - 2], sb[..sb.len() - 2], "matmul batch dims");
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let a = self.data();
        let b = other.data();
        let mut out = vec![0.0; batch * m * n];
        if shared_b {
            gemm(batch * m, k, n, 1.0, &a, MatView::rows(k), &b, MatView::rows(n), 0.0, &mut out, MatView::rows(n));
        } else {
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    1.0,
                    &a[i * m * k..],
                    MatView::rows(k),
                    &b[i * k * n..],
                    MatView::rows(n),
                    0.0,
                    &mut out[i * m * n..],
                    MatView::rows(n),
                );
            }
        }
        drop(a);
        drop(b);
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([m, n]);
        Tensor::from_op(out, shape, MatmulFn { a: self.clone(), b: other.clone() })
    }
}

/// `x · w + b` over the last axis of `x`; `w` is `(in, out)`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (cin, cout) = (w.dim(0), w.dim(1));
    assert_eq!(*x.shape().last().unwrap(), cin, "linear: input width {:?} vs weight {:?}", x.shape(), w.shape());
    if let Some(b) = b {
        assert_eq!(b.shape(), &[cout]);
    }
    let rows = x.numel() / cin;
    let mut out = vec![0.0; rows * cout];
    {
        let xd = x.data();
        let wd = w.data();
        gemm(rows, cin, cout, 1.0, &xd, MatView::rows(cin), &wd, MatView::rows(cout), 0.0, &mut out, MatView::rows(cout));
    }
    if let Some(b) = b {
        let bd = b.data();
        for row in out.chunks_mut(cout) {
            for (o, bv) in row.iter_mut().zip(bd.iter()) {
                *o += bv;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = cout;
    Tensor::from_op(out, shape, LinearFn { x: x.clone(), w: w.clone(), b: b.cloned() })
}
