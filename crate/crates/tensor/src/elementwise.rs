//! Elementwise arithmetic with numpy-style broadcasting, and pointwise
//! nonlinearities.

use crate::shape::{broadcast_index, broadcast_shape, numel};
use crate::tensor::{GradFn, Tensor};

#[derive(Debug, Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
        }
    }
}

struct BinaryFn {
    a: Tensor,
    b: Tensor,
    kind: BinaryKind,
}

/// Sums `grad` (shaped like the broadcast output) back onto an input.
fn reduce_to(grad: &[f64], index: Option<&[usize]>, len: usize) -> Vec<f64> {
    match index {
        None => grad.to_vec(),
        Some(idx) => {
            let mut g = vec![0.0; len];
            for (o, &i) in idx.iter().enumerate() {
                g[i] += grad[o];
            }
            g
        }
    }
}

impl GradFn for BinaryFn {
    fn name(&self) -> &'static str {
        "binary"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.a, &self.b]
    }
    fn backward(&self, out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let out_shape = broadcast_shape(self.a.shape(), self.b.shape());
        let ia = (self.a.shape() != out_shape.as_slice())
            .then(|| broadcast_index(&out_shape, self.a.shape()));
        let ib = (self.b.shape() != out_shape.as_slice())
            .then(|| broadcast_index(&out_shape, self.b.shape()));
        let at = |idx: &Option<Vec<usize>>, o: usize| idx.as_ref().map_or(o, |v| v[o]);
        let (na, nb) = (self.a.numel(), self.b.numel());
        let (ga_full, gb_full): (Option<Vec<f64>>, Option<Vec<f64>>) = match self.kind {
            BinaryKind::Add => (Some(grad.to_vec()), Some(grad.to_vec())),
            BinaryKind::Sub => (Some(grad.to_vec()), Some(grad.iter().map(|g| -g).collect())),
            BinaryKind::Mul => {
                let a = self.a.data();
                let b = self.b.data();
                let ga = self.a.requires_grad().then(|| {
                    grad.iter().enumerate().map(|(o, g)| g * b[at(&ib, o)]).collect()
                });
                let gb = self.b.requires_grad().then(|| {
                    grad.iter().enumerate().map(|(o, g)| g * a[at(&ia, o)]).collect()
                });
                (ga, gb)
            }
            BinaryKind::Div => {
                let b = self.b.data();
                let ga = self.a.requires_grad().then(|| {
                    grad.iter().enumerate().map(|(o, g)| g / b[at(&ib, o)]).collect()
                });
                // d(a/b)/db = -out/b
                let gb = self.b.requires_grad().then(|| {
                    grad.iter().enumerate().map(|(o, g)| -g * out[o] / b[at(&ib, o)]).collect()
                });
                (ga, gb)
            }
        };
        vec![
            ga_full.map(|g| reduce_to(&g, ia.as_deref(), na)),
            gb_full.map(|g| reduce_to(&g, ib.as_deref(), nb)),
        ]
    }
}

fn binary(a: &Tensor, b: &Tensor, kind: BinaryKind) -> Tensor {
    let out_shape = broadcast_shape(a.shape(), b.shape());
    let da = a.data();
    let db = b.data();
    let data: Vec<f64> = if a.shape() == b.shape() {
        da.iter().zip(db.iter()).map(|(&x, &y)| kind.apply(x, y)).collect()
    } else if b.numel() == 1 {
        let y = db[0];
        let ia = (a.shape() != out_shape.as_slice()).then(|| broadcast_index(&out_shape, a.shape()));
        (0..numel(&out_shape))
            .map(|o| kind.apply(da[ia.as_ref().map_or(o, |v| v[o])], y))
            .collect()
    } else {
        let ia = broadcast_index(&out_shape, a.shape());
        let ib = broadcast_index(&out_shape, b.shape());
        ia.iter().zip(&ib).map(|(&i, &j)| kind.apply(da[i], db[j])).collect()
    };
    drop(da);
    drop(db);
    Tensor::from_op(data, out_shape, BinaryFn { a: a.clone(), b: b.clone(), kind })
}

#[derive(Debug, Clone, Copy)]
enum UnaryKind {
    Neg,
    Exp,
    Ln,
    Sqrt,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Gelu,
    Tanh,
    Square,
    Scale(f64),
    Offset(f64),
}

impl UnaryKind {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Neg => -x,
            UnaryKind::Exp => x.exp(),
            UnaryKind::Ln => x.ln(),
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Relu => x.max(0.0),
            UnaryKind::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            UnaryKind::Gelu => 0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)),
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Square => x * x,
            UnaryKind::Scale(c) => c * x,
            UnaryKind::Offset(c) => x + c,
        }
    }

    /// Derivative given the input `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Neg => -1.0,
            UnaryKind::Exp => y,
            UnaryKind::Ln => 1.0 / x,
            UnaryKind::Sqrt => 0.5 / y,
            UnaryKind::Sigmoid => y * (1.0 - y),
            UnaryKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            UnaryKind::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + x * pdf
            }
            UnaryKind::Tanh => 1.0 - y * y,
            UnaryKind::Square => 2.0 * x,
            UnaryKind::Scale(c) => c,
            UnaryKind::Offset(_) => 1.0,
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct UnaryFn {
    input: Tensor,
    kind: UnaryKind,
}

impl GradFn for UnaryFn {
    fn name(&self) -> &'static str {
        "unary"
    }
    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }
    fn backward(&self, out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = self.input.data();
        let g = grad
            .iter()
            .zip(x.iter().zip(out))
            .map(|(g, (&x, &y))| g * self.kind.derivative(x, y))
            .collect();
        vec![Some(g)]
    }
}

fn unary(x: &Tensor, kind: UnaryKind) -> Tensor {
    let data = x.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor::from_op(data, x.shape().to_vec(), UnaryFn { input: x.clone(), kind })
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        binary(self, other, BinaryKind::Add)
    }
    pub fn sub(&self, other: &Tensor) -> Tensor {
        binary(self, other, BinaryKind::Sub)
    }
    pub fn mul(&self, other: &Tensor) -> Tensor {
        binary(self, other, BinaryKind::Mul)
    }
    pub fn div(&self, other: &Tensor) -> Tensor {
        binary(self, other, BinaryKind::Div)
    }
    pub fn neg(&self) -> Tensor {
        unary(self, UnaryKind::Neg)
    }
    pub fn exp(&self) -> Tensor {
        unary(self, UnaryKind::Exp)
    }
    pub fn ln(&self) -> Tensor {
        unary(self, UnaryKind::Ln)
    }
    pub fn sqrt(&self) -> Tensor {
        unary(self, UnaryKind::Sqrt)
    }
    pub fn sigmoid(&self) -> Tensor {
        unary(self, UnaryKind::Sigmoid)
    }
    pub fn relu(&self) -> Tensor {
        unary(self, UnaryKind::Relu)
    }
    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        unary(self, UnaryKind::LeakyRelu(slope))
    }
    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Tensor {
        unary(self, UnaryKind::Gelu)
    }
    pub fn tanh(&self) -> Tensor {
        unary(self, UnaryKind::Tanh)
    }
    pub fn square(&self) -> Tensor {
        unary(self, UnaryKind::Square)
    }
    pub fn mul_scalar(&self, c: f64) -> Tensor {
        unary(self, UnaryKind::Scale(c))
    }
    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(self, UnaryKind::Offset(c))
    }
}
