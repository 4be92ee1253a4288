//! Every backward rule against central differences of its forward.

use std::rc::Rc;

use fuseg3d_tensor::gradcheck::{check_input, GradCheckReport};
use fuseg3d_tensor::{attention, concat, conv3d, linear, PadMode, RelativeBias, Tensor, WindowMask};

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn values(n: usize, seed: u64) -> Vec<f64> {
    // Deterministic, irregular, away from ReLU kinks and max ties.
    (0..n).map(|i| ((i as f64 + 1.0) * 0.7373 + seed as f64 * 1.913).sin() * 1.3 + 0.011 * i as f64).collect()
}

fn leaf(shape: &[usize], seed: u64) -> Tensor {
    Tensor::leaf(values(shape.iter().product(), seed), shape)
}

fn fixed(shape: &[usize], seed: u64) -> Tensor {
    Tensor::new(values(shape.iter().product(), seed + 100), shape)
}

/// Weighted sum so that every output element matters differently.
fn readout(y: &Tensor) -> Tensor {
    y.mul(&fixed(y.shape(), 999)).sum()
}

fn ok(r: GradCheckReport, what: &str) {
    assert!(r.max_rel_error < TOL, "{what}: {:e} at {}", r.max_rel_error, r.worst);
}

#[test]
fn elementwise_rules() {
    let x = leaf(&[2, 3, 4], 1);
    let y = fixed(&[3, 1], 2);
    let pos = Tensor::leaf(values(24, 3).iter().map(|v| v.abs() + 0.5).collect(), &[2, 3, 4]);
    ok(check_input(&x, &|x| readout(&x.add(&y)), H, FLOOR), "add");
    ok(check_input(&x, &|x| readout(&x.sub(&y)), H, FLOOR), "sub");
    ok(check_input(&x, &|x| readout(&x.mul(&y)), H, FLOOR), "mul");
    ok(check_input(&pos, &|p| readout(&y.div(p)), H, FLOOR), "div denominator");
    ok(check_input(&x, &|x| readout(&x.div(&y.add_scalar(3.0))), H, FLOOR), "div numerator");
    ok(check_input(&x, &|x| readout(&x.neg().exp()), H, FLOOR), "exp");
    ok(check_input(&pos, &|p| readout(&p.ln()), H, FLOOR), "ln");
    ok(check_input(&pos, &|p| readout(&p.sqrt()), H, FLOOR), "sqrt");
    ok(check_input(&x, &|x| readout(&x.sigmoid()), H, FLOOR), "sigmoid");
    ok(check_input(&x, &|x| readout(&x.relu()), H, FLOOR), "relu");
    ok(check_input(&x, &|x| readout(&x.leaky_relu(0.1)), H, FLOOR), "leaky_relu");
    ok(check_input(&x, &|x| readout(&x.gelu()), H, FLOOR), "gelu");
    ok(check_input(&x, &|x| readout(&x.tanh()), H, FLOOR), "tanh");
    ok(check_input(&x, &|x| readout(&x.square().mul_scalar(0.3).add_scalar(1.0)), H, FLOOR), "square");
}

#[test]
fn broadcast_operand_receives_reduced_gradient() {
    let x = fixed(&[2, 3, 4], 1);
    let y = leaf(&[3, 1], 2);
    ok(check_input(&y, &|y| readout(&x.mul(y)), H, FLOOR), "mul broadcast");
    ok(check_input(&y, &|y| readout(&x.add(y)), H, FLOOR), "add broadcast");
}

#[test]
fn reductions() {
    let x = leaf(&[3, 4, 5], 4);
    ok(check_input(&x, &|x| x.sum().square(), H, FLOOR), "sum");
    ok(check_input(&x, &|x| x.mean().square(), H, FLOOR), "mean");
    for axis in 0..3 {
        ok(check_input(&x, &|x| readout(&x.sum_axis(axis)), H, FLOOR), "sum_axis");
        ok(check_input(&x, &|x| readout(&x.mean_axis(axis)), H, FLOOR), "mean_axis");
        ok(check_input(&x, &|x| readout(&x.max_axis(axis)), H, FLOOR), "max_axis");
    }
    ok(check_input(&x, &|x| readout(&x.softmax_last()), H, FLOOR), "softmax");
    ok(check_input(&x, &|x| readout(&x.normalize_last(1e-5)), H, FLOOR), "normalize");
}

#[test]
fn shape_ops() {
    let x = leaf(&[2, 3, 4, 5], 5);
    ok(check_input(&x, &|x| readout(&x.reshape(&[6, 20])), H, FLOOR), "reshape");
    ok(check_input(&x, &|x| readout(&x.permute(&[3, 1, 0, 2])), H, FLOOR), "permute");
    ok(check_input(&x, &|x| readout(&x.pad(&[(0, 0), (1, 2), (0, 1), (2, 0)], PadMode::Zeros)), H, FLOOR), "pad zeros");
    ok(check_input(&x, &|x| readout(&x.pad(&[(0, 1), (0, 2), (1, 1), (0, 3)], PadMode::Replicate)), H, FLOOR), "pad replicate");
    ok(check_input(&x, &|x| readout(&x.narrow(2, 1, 2)), H, FLOOR), "narrow");
    ok(check_input(&x, &|x| readout(&x.crop_to(&[2, 2, 3, 4])), H, FLOOR), "crop");
    ok(check_input(&x, &|x| readout(&x.roll(&[1, -1, 2, -3])), H, FLOOR), "roll");
    let y = fixed(&[2, 1, 4, 5], 6);
    ok(check_input(&x, &|x| readout(&concat(&[y.clone(), x.clone(), y.clone()], 1)), H, FLOOR), "concat");
}

#[test]
fn linear_algebra() {
    let a = leaf(&[4, 3], 7);
    let b = leaf(&[3, 5], 8);
    ok(check_input(&a, &|a| readout(&a.matmul(&b.detach())), H, FLOOR), "matmul lhs");
    ok(check_input(&b, &|b| readout(&a.detach().matmul(b)), H, FLOOR), "matmul rhs");
    let x = leaf(&[2, 3, 4], 9);
    let w = leaf(&[4, 6], 10);
    let bias = leaf(&[6], 11);
    ok(check_input(&x, &|x| readout(&linear(x, &w.detach(), Some(&bias.detach()))), H, FLOOR), "linear x");
    ok(check_input(&w, &|w| readout(&linear(&x.detach(), w, Some(&bias.detach()))), H, FLOOR), "linear w");
    ok(check_input(&bias, &|b| readout(&linear(&x.detach(), &w.detach(), Some(b))), H, FLOOR), "linear b");
}

#[test]
fn convolution() {
    let x = leaf(&[2, 3, 4, 3, 5], 12);
    let w = leaf(&[2, 3, 3, 3, 3], 13);
    let b = leaf(&[2], 14);
    ok(check_input(&x, &|x| readout(&conv3d(x, &w.detach(), Some(&b.detach()))), H, FLOOR), "conv x");
    ok(check_input(&w, &|w| readout(&conv3d(&x.detach(), w, Some(&b.detach()))), H, FLOOR), "conv w");
    ok(check_input(&b, &|b| readout(&conv3d(&x.detach(), &w.detach(), Some(b))), H, FLOOR), "conv b");
}

#[test]
fn masked_attention_with_bias() {
    // Two windows of 6 tokens, two heads; window 1 has padding and two regions.
    let (g, heads, n, d) = (4, 2, 6, 3);
    let q = leaf(&[g, heads, n, d], 15);
    let k = leaf(&[g, heads, n, d], 16);
    let v = leaf(&[g, heads, n, d], 17);
    let table = leaf(&[5, heads], 18);
    let index = Rc::new((0..n * n).map(|i| (i * 7) % 5).collect::<Vec<_>>());
    let mask = Rc::new(WindowMask { windows: 2, tokens: n, labels: vec![0, 0, 0, 0, 0, 0, 0, 1, -1, 1, 0, -1] });
    let bias = |t: &Tensor| RelativeBias { table: t.clone(), index: index.clone() };
    let tb = table.detach();
    let run = |q: &Tensor, k: &Tensor, v: &Tensor, t: &Tensor| readout(&attention(q, k, v, 0.6, Some(&bias(t)), Some(&mask)));
    ok(check_input(&q, &|x| run(x, &k.detach(), &v.detach(), &tb), H, FLOOR), "attention q");
    ok(check_input(&k, &|x| run(&q.detach(), x, &v.detach(), &tb), H, FLOOR), "attention k");
    ok(check_input(&v, &|x| run(&q.detach(), &k.detach(), x, &tb), H, FLOOR), "attention v");
    ok(check_input(&table, &|t| run(&q.detach(), &k.detach(), &v.detach(), t), H, FLOOR), "attention bias table");
    let plain = |q: &Tensor| readout(&attention(q, &k.detach(), &v.detach(), 0.6, None, None));
    ok(check_input(&q, &plain, H, FLOOR), "attention unmasked");
    // Padding queries produce zero output.
    let out = attention(&q, &k, &v, 0.6, None, Some(&mask)).to_vec();
    for gi in [1, 3] {
        for h in 0..heads {
            for tok in [2, 5] {
                let o = ((gi * heads + h) * n + tok) * d;
                assert!(out[o..o + d].iter().all(|&x| x == 0.0));
            }
        }
    }
}
