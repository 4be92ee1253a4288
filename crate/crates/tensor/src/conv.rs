//! Stride-1, zero-padded ("same") 3D convolution over channel-first volumes.
//!
//! Lowered to GEMM through im2col over slabs of output planes, so the
//! column buffer stays bounded regardless of volume size. The backward pass
//! rebuilds the columns instead of storing them.

use crate::linalg::{gemm, MatView};
use crate::tensor::{GradFn, Tensor};

/// Upper bound on column-buffer elements per slab.
const COLUMN_BUDGET: usize = 1 << 22;

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    k: usize,
    h: usize,
    w: usize,
    d: usize,
}

impl Geometry {
    fn of(x: &Tensor, weight: &Tensor) -> Self {
        let xs = x.shape();
        let ws = weight.shape();
        assert_eq!(xs.len(), 5, "conv3d input must be (B, C, H, W, D), got {xs:?}");
        assert_eq!(ws.len(), 5, "conv3d weight must be (Cout, Cin, k, k, k), got {ws:?}");
        assert_eq!(xs[1], ws[1], "conv3d channel mismatch: input {xs:?}, weight {ws:?}");
        assert!(ws[2] == ws[3] && ws[3] == ws[4], "conv3d kernel must be cubic");
        assert!(ws[2] % 2 == 1, "conv3d kernel must be odd, got {}", ws[2]);
        Geometry { batch: xs[0], cin: xs[1], cout: ws[0], k: ws[2], h: xs[2], w: xs[3], d: xs[4] }
    }
    fn voxels(&self) -> usize {
        self.h * self.w * self.d
    }
    fn taps(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }
    fn planes_per_slab(&self) -> usize {
        let per_plane = self.w * self.d * self.taps();
        (COLUMN_BUDGET / per_plane.max(1)).clamp(1, self.h)
    }
}

/// Fills `cols` (taps × ncols) for output planes `h0..h1` of one sample.
fn im2col(x: &[f64], g: Geometry, h0: usize, h1: usize, cols: &mut [f64]) {
    let (k, p) = (g.k, (g.k / 2) as isize);
    let plane = g.w * g.d;
    let ncols = (h1 - h0) * plane;
    cols[..g.taps() * ncols].fill(0.0);
    for c in 0..g.cin {
        let xc = &x[c * g.voxels()..(c + 1) * g.voxels()];
        for kx in 0..k {
            for ky in 0..k {
                for kz in 0..k {
                    let row = ((c * k + kx) * k + ky) * k + kz;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    let dz = kz as isize - p;
                    let d_lo = (-dz).max(0) as usize;
                    let d_hi = (g.d as isize - dz).min(g.d as isize).max(0) as usize;
                    if d_lo >= d_hi {
                        continue;
                    }
                    for h in h0..h1 {
                        let ih = h as isize + kx as isize - p;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        for w in 0..g.w {
                            let iw = w as isize + ky as isize - p;
                            if iw < 0 || iw >= g.w as isize {
                                continue;
                            }
                            let src = (ih as usize * g.w + iw as usize) * g.d;
                            let o = ((h - h0) * g.w + w) * g.d;
                            let s_lo = (src as isize + d_lo as isize + dz) as usize;
                            dst[o + d_lo..o + d_hi].copy_from_slice(&xc[s_lo..s_lo + (d_hi - d_lo)]);
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back onto `dx` (inverse layout of `im2col`).
fn col2im(cols: &[f64], g: Geometry, h0: usize, h1: usize, dx: &mut [f64]) {
    let (k, p) = (g.k, (g.k / 2) as isize);
    let plane = g.w * g.d;
    let ncols = (h1 - h0) * plane;
    for c in 0..g.cin {
        let dxc = &mut dx[c * g.voxels()..(c + 1) * g.voxels()];
        for kx in 0..k {
            for ky in 0..k {
                for kz in 0..k {
                    let row = ((c * k + kx) * k + ky) * k + kz;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    let dz = kz as isize - p;
                    let d_lo = (-dz).max(0) as usize;
                    let d_hi = (g.d as isize - dz).min(g.d as isize).max(0) as usize;
                    if d_lo >= d_hi {
                        continue;
                    }
                    for h in h0..h1 {
                        let ih = h as isize + kx as isize - p;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        for w in 0..g.w {
                            let iw = w as isize + ky as isize - p;
                            if iw < 0 || iw >= g.w as isize {
                                continue;
                            }
                            let dst = (ih as usize * g.w + iw as usize) * g.d;
                            let o = ((h - h0) * g.w + w) * g.d;
                            let t_lo = (dst as isize + d_lo as isize + dz) as usize;
                            for (t, s) in dxc[t_lo..t_lo + (d_hi - d_lo)].iter_mut().zip(&src[o + d_lo..o + d_hi]) {
                                *t += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Conv3dFn {
    x: Tensor,
    weight: Tensor,
    bias: Option<Tensor>,
}

impl GradFn for Conv3dFn {
    fn name(&self) -> &'static str {
        "conv3d"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.x, &self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }
    fn backward(&self, _out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let g = Geometry::of(&self.x, &self.weight);
        let n = g.voxels();
        let taps = g.taps();
        let x = self.x.data();
        let w = self.weight.data();
        let want_x = self.x.requires_grad();
        let want_w = self.weight.requires_grad();
        let mut gx = want_x.then(|| vec![0.0; x.len()]);
        let mut gw = want_w.then(|| vec![0.0; w.len()]);
        let slab = g.planes_per_slab();
        let mut cols = if g.k > 1 { vec![0.0; taps * slab * g.w * g.d] } else { Vec::new() };
        for b in 0..g.batch {
            let xb = &x[b * g.cin * n..(b + 1) * g.cin * n];
            let gy = &grad[b * g.cout * n..(b + 1) * g.cout * n];
            if g.k == 1 {
                if let Some(gw) = gw.as_mut() {
                    gemm(g.cout, n, g.cin, 1.0, gy, MatView::rows(n), xb, MatView::rows(n).t(), 1.0, gw, MatView::rows(g.cin));
                }
                if let Some(gx) = gx.as_mut() {
                    let gxb = &mut gx[b * g.cin * n..(b + 1) * g.cin * n];
                    gemm(g.cin, g.cout, n, 1.0, &w, MatView::rows(g.cin).t(), gy, MatView::rows(n), 0.0, gxb, MatView::rows(n));
                }
                continue;
            }
            let mut h0 = 0;
            while h0 < g.h {
                let h1 = (h0 + slab).min(g.h);
                let ncols = (h1 - h0) * g.w * g.d;
                let gy_slab = &gy[h0 * g.w * g.d..];
                if let Some(gw) = gw.as_mut() {
                    im2col(xb, g, h0, h1, &mut cols);
                    gemm(g.cout, ncols, taps, 1.0, gy_slab, MatView::rows(n), &cols, MatView::rows(ncols).t(), 1.0, gw, MatView::rows(taps));
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(taps, g.cout, ncols, 1.0, &w, MatView::rows(taps).t(), gy_slab, MatView::rows(n), 0.0, &mut cols, MatView::rows(ncols));
                    col2im(&cols, g, h0, h1, &mut gx[b * g.cin * n..(b + 1) * g.cin * n]);
                }
                h0 = h1;
            }
        }
        let mut out = vec![gx, gw];
        if let Some(bias) = &self.bias {
            out.push(bias.requires_grad().then(|| {
                let mut gb = vec![0.0; g.cout];
                for b in 0..g.batch {
                    for (c, acc) in gb.iter_mut().enumerate() {
                        let s = (b * g.cout + c) * n;
                        *acc += grad[s..s + n].iter().sum::<f64>();
                    }
                }
                gb
            }));
        }
        out
    }
}

/// 3D convolution, stride 1, zero padding `(k-1)/2` so the spatial shape is
/// preserved. `x` is `(B, Cin, H, W, D)`, `weight` is `(Cout, Cin, k, k, k)`.
pub fn conv3d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let g = Geometry::of(x, weight);
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[g.cout], "conv3d bias shape");
    }
    let n = g.voxels();
    let taps = g.taps();
    let mut out = vec![0.0; g.batch * g.cout * n];
    {
        let xd = x.data();
        let wd = weight.data();
        let slab = g.planes_per_slab();
        let mut cols = if g.k > 1 { vec![0.0; taps * slab * g.w * g.d] } else { Vec::new() };
        for b in 0..g.batch {
            let xb = &xd[b * g.cin * n..(b + 1) * g.cin * n];
            let yb = &mut out[b * g.cout * n..(b + 1) * g.cout * n];
            if g.k == 1 {
                gemm(g.cout, g.cin, n, 1.0, &wd, MatView::rows(g.cin), xb, MatView::rows(n), 0.0, yb, MatView::rows(n));
                continue;
            }
            let mut h0 = 0;
            while h0 < g.h {
                let h1 = (h0 + slab).min(g.h);
                let ncols = (h1 - h0) * g.w * g.d;
                im2col(xb, g, h0, h1, &mut cols);
                gemm(
                    g.cout,
                    taps,
                    ncols,
                    1.0,
                    &wd,
                    MatView::rows(taps),
                    &cols,
                    MatView::rows(ncols),
                    0.0,
                    &mut yb[h0 * g.w * g.d..],
                    MatView::rows(n),
                );
                h0 = h1;
            }
        }
        if let Some(bias) = bias {
            let bd = bias.data();
            for b in 0..g.batch {
                for c in 0..g.cout {
                    let s = (b * g.cout + c) * n;
                    for v in &mut out[s..s + n] {
                        *v += bd[c];
                    }
                }
            }
        }
    }
    Tensor::from_op(
        out,
        vec![g.batch, g.cout, g.h, g.w, g.d],
        Conv3dFn { x: x.clone(), weight: weight.clone(), bias: bias.cloned() },
    )
}
