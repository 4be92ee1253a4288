//! Brute-force references for windowed attention.

#![allow(dead_code)]

use fuseg3d_core::{ModelConfig, MsifConfig};
use fuseg3d_model::backbone::WindowAttention;
use fuseg3d_model::msif::{Msif, MsifTrace};
use fuseg3d_model::window::WindowLayout;
use fuseg3d_tensor::{Init, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn floor_div(a: isize, m: isize) -> isize {
    a.div_euclid(m)
}

/// Original grid coordinate of token `t` of window `g`, or `None` for
/// padding. Works from the window counts, the roll and the grid alone.
pub fn token_origin(layout: &WindowLayout, g: usize, t: usize) -> Option<[usize; 3]> {
    let m = layout.window;
    let [_, nw, nd] = layout.counts();
    let win = [g / (nw * nd), (g / nd) % nw, g % nd];
    let local = [t / (m * m), (t / m) % m, t % m];
    let mut p = [0usize; 3];
    for ax in 0..3 {
        let rolled = win[ax] * m + local[ax];
        p[ax] = (rolled + layout.shift[ax]) % layout.padded[ax];
        if p[ax] >= layout.grid[ax] {
            return None;
        }
    }
    Some(p)
}

/// Whether query `i` may attend to key `j` in window `g`: both must be real
/// tokens sharing the same shifted cell `floor((p - s) / M)` on every axis.
pub fn may_attend(layout: &WindowLayout, g: usize, i: usize, j: usize) -> bool {
    let Some(pj) = token_origin(layout, g, j) else { return false };
    let Some(pi) = token_origin(layout, g, i) else { return false };
    let m = layout.window as isize;
    (0..3).all(|ax| {
        let s = layout.shift[ax] as isize;
        floor_div(pi[ax] as isize - s, m) == floor_div(pj[ax] as isize - s, m)
    })
}

/// Counts disagreements between the layout's mask and [`may_attend`].
pub fn mask_mismatches(layout: &WindowLayout) -> usize {
    let n = layout.tokens_per_window();
    let mut bad = 0;
    for g in 0..layout.num_windows() {
        for i in 0..n {
            for j in 0..n {
                let got = layout.mask.as_ref().map_or(true, |mk| mk.allowed(g, i, j));
                if got != may_attend(layout, g, i, j) {
                    bad += 1;
                }
            }
        }
    }
    bad
}

/// `x (N, cin) · w (cin, cout) + b`.
pub fn matmul(x: &[f64], n: usize, cin: usize, w: &[f64], cout: usize, b: Option<&[f64]>) -> Vec<f64> {
    let mut y = vec![0.0; n * cout];
    for r in 0..n {
        for o in 0..cout {
            let mut acc = b.map_or(0.0, |b| b[o]);
            for i in 0..cin {
                acc += x[r * cin + i] * w[i * cout + o];
            }
            y[r * cout + o] = acc;
        }
    }
    y
}

/// Dense multi-head attention over all `n` tokens. `q`, `k`, `v` are
/// `(n, heads·dh)`; `bias(h, i, j)` is added to the scores. Returns the
/// `(n, heads·dh)` output and the `(heads, n, n)` probabilities.
pub fn dense_attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    heads: usize,
    dh: usize,
    bias: &dyn Fn(usize, usize, usize) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let c = heads * dh;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; n * c];
    let mut probs = vec![0.0; heads * n * n];
    for h in 0..heads {
        for i in 0..n {
            let mut s: Vec<f64> = (0..n)
                .map(|j| (0..dh).map(|t| q[i * c + h * dh + t] * k[j * c + h * dh + t]).sum::<f64>() * scale + bias(h, i, j))
                .collect();
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter_mut().map(|x| {
                *x = (*x - mx).exp();
                *x
            }).sum();
            for j in 0..n {
                let p = s[j] / z;
                probs[(h * n + i) * n + j] = p;
                for t in 0..dh {
                    out[i * c + h * dh + t] += p * v[j * c + h * dh + t];
                }
            }
        }
    }
    (out, probs)
}

fn random(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Tokens of a single-window grid, listed in grid order.
fn grid_coords(grid: [usize; 3]) -> Vec<[usize; 3]> {
    let mut v = Vec::new();
    for h in 0..grid[0] {
        for w in 0..grid[1] {
            for d in 0..grid[2] {
                v.push([h, w, d]);
            }
        }
    }
    v
}

/// Max abs difference between windowed self-attention with relative bias
/// and the dense reference, on a grid that fits one window.
pub fn self_attention_error(grid: [usize; 3], m: usize, shifted: bool, seed: u64) -> f64 {
    let (c, heads) = (8, 2);
    let dh = c / heads;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attn = WindowAttention::new(&mut Init::new(seed), c, heads, m, true);
    attn.qkv.weight.set_values(&random(&mut rng, c * 3 * c, 0.5));
    attn.qkv.bias.as_ref().unwrap().set_values(&random(&mut rng, 3 * c, 0.2));
    attn.proj.bias.as_ref().unwrap().set_values(&random(&mut rng, c, 0.2));
    let table = attn.bias_table.as_ref().unwrap();
    table.set_values(&random(&mut rng, table.numel(), 1.0));

    let n: usize = grid.iter().product();
    let x = random(&mut rng, n * c, 1.0);
    let layout = WindowLayout::new(grid, m, shifted);
    assert_eq!(layout.num_windows(), 1);
    let xt = Tensor::new(x.clone(), &[1, grid[0], grid[1], grid[2], c]);
    let got = layout.unpartition(&attn.forward(&layout.partition(&xt), layout.mask.as_ref()), 1).to_vec();

    let qkv = matmul(&x, n, c, &attn.qkv.weight.values(), 3 * c, Some(&attn.qkv.bias.as_ref().unwrap().values()));
    let part = |p: usize| -> Vec<f64> { (0..n).flat_map(|r| qkv[r * 3 * c + p * c..r * 3 * c + (p + 1) * c].to_vec()).collect() };
    let coords = grid_coords(grid);
    let tab = table.values();
    let span = 2 * m - 1;
    let bias = |h: usize, i: usize, j: usize| {
        let (a, b) = (coords[i], coords[j]);
        let off = |ax: usize| a[ax] + m - 1 - b[ax];
        tab[((off(0) * span + off(1)) * span + off(2)) * heads + h]
    };
    let (heads_out, _) = dense_attention(&part(0), &part(1), &part(2), n, heads, dh, &bias);
    let want = matmul(&heads_out, n, c, &attn.proj.weight.values(), c, Some(&attn.proj.bias.as_ref().unwrap().values()));
    got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn msif_for(c: usize, heads: usize, m: usize, conventional: bool) -> Msif {
    let model = ModelConfig { embed_dim: c, num_heads: heads, window_size: m, ..Default::default() };
    let cfg = MsifConfig { conventional_values: conventional, ..Default::default() };
    Msif::new(&mut Init::new(5), c, 0, &model, &cfg).unwrap()
}

/// Max abs differences of both cross-attention outputs from the dense
/// reference.
pub fn cross_attention_error(grid: [usize; 3], conventional: bool) -> (f64, f64) {
    let (c, heads, m) = (8, 2, 7);
    let dh = c / heads;
    let msif = msif_for(c, heads, m, conventional);
    let cross = msif.branches[0].cross.as_ref().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    cross.qkv.weight.set_values(&random(&mut rng, c * 3 * c, 0.6));
    let n: usize = grid.iter().product();
    // Channel-first inputs; the oracle reads them token by token.
    let f1 = random(&mut rng, n * c, 1.0);
    let f2 = random(&mut rng, n * c, 1.0);
    let shape = [1, c, grid[0], grid[1], grid[2]];
    let mut trace = MsifTrace::default();
    let pair = msif.cross_attention(cross, &Tensor::new(f1.clone(), &shape), &Tensor::new(f2.clone(), &shape), &mut trace);

    let tokens = |f: &[f64]| -> Vec<f64> { (0..n).flat_map(|t| (0..c).map(move |ch| (t, ch))).map(|(t, ch)| f[ch * n + t]).collect() };
    let (t1, t2) = (tokens(&f1), tokens(&f2));
    let w = cross.qkv.weight.values();
    let proj = |t: &[f64], p: usize| -> Vec<f64> {
        let all = matmul(t, n, c, &w, 3 * c, None);
        (0..n).flat_map(|r| all[r * 3 * c + p * c..r * 3 * c + (p + 1) * c].to_vec()).collect()
    };
    let (q1, k1, v1) = (proj(&t1, 0), proj(&t1, 1), proj(&t1, 2));
    let (q2, k2, v2) = (proj(&t2, 0), proj(&t2, 1), proj(&t2, 2));
    let zero = |_: usize, _: usize, _: usize| 0.0;
    let (va, vb) = if conventional { (&v2, &v1) } else { (&v1, &v2) };
    let (want1, _) = dense_attention(&q1, &k2, va, n, heads, dh, &zero);
    let (want2, _) = dense_attention(&q2, &k1, vb, n, heads, dh, &zero);
    let diff = |a: &Tensor, b: &[f64]| a.to_vec().iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    (diff(&pair.att1, &want1), diff(&pair.att2, &want2))
}
