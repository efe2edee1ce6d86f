//! Dense tensor arithmetic, standard nonlinearities, a small feed-forward
//! network, and reverse-mode gradients over a recorded operation tape.
//!
//! All math is in 64-bit reals. Tensors are immutable after construction
//! except for gradient buffers; a training run owns one [`Tape`] per step.

mod mlp;
mod optim;
mod store;
mod tape;

pub use mlp::{Activation, Init, Mlp};
pub use optim::Adam;
pub use store::{load_params, save_params};
pub use tape::{bilinear_forward as bilinear_at, Tape, Vid};

use crate::error::{require, Result};

/// Dense n-dimensional real array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        require(
            shape.iter().product::<usize>() == data.len(),
            format!("tensor shape {:?} does not match data length {}", shape, data.len()),
        )?;
        require(shape.iter().all(|&e| e > 0), "tensor extents must be positive")?;
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: vec![1], data: vec![v], requires_grad: false, grad: None }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n], requires_grad: false, grad: None }
    }

    pub fn ones(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![1.0; n], requires_grad: false, grad: None }
    }

    pub fn uniform<R: rand::Rng>(rng: &mut R, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor { shape, data, requires_grad: false, grad: None }
    }

    /// Marks the tensor as a trainable leaf.
    pub fn tracked(mut self) -> Tensor {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// In-place update of the underlying values (optimizer step).
    pub fn apply_update(&mut self, f: impl Fn(usize, f64) -> f64) {
        for (i, v) in self.data.iter_mut().enumerate() {
            *v = f(i, *v);
        }
    }

    /// Element at a rank-2 position.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows of a rank-1 or rank-2 tensor as slices.
    pub fn row(&self, i: usize) -> &[f64] {
        match self.rank() {
            1 => &self.data,
            2 => {
                let w = self.shape[1];
                &self.data[i * w..(i + 1) * w]
            }
            _ => panic!("row() needs rank <= 2"),
        }
    }
}

// ── shared kernels (used by both the pure ops and the tape) ─────────────

pub(crate) fn softmax_kernel(data: &[f64], shape: &[usize], axis: usize, out: &mut [f64]) {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| o * len * inner + k * inner + i;
            let mut m = f64::NEG_INFINITY;
            for k in 0..len {
                m = m.max(data[idx(k)]);
            }
            let mut z = 0.0;
            for k in 0..len {
                let e = (data[idx(k)] - m).exp();
                out[idx(k)] = e;
                z += e;
            }
            for k in 0..len {
                out[idx(k)] /= z;
            }
        }
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    // clamp the exponent argument to keep exp finite
    let x = x.clamp(-40.0, 40.0);
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += av * b[p * n + j];
            }
        }
    }
    c
}

// ── exported pure operations ─────────────────────────────────────────────

/// Numerically stabilized softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    require(axis < x.rank(), format!("softmax axis {} out of range for rank {}", axis, x.rank()))?;
    let mut out = vec![0.0; x.len()];
    softmax_kernel(&x.data, &x.shape, axis, &mut out);
    Tensor::new(x.shape.clone(), out)
}

/// Elementwise logistic function, exponent clamped to ±40.
pub fn sigmoid(x: &Tensor) -> Tensor {
    let data = x.data.iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor { shape: x.shape.clone(), data, requires_grad: false, grad: None }
}

/// Rank-2 matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require(a.rank() == 2 && b.rank() == 2, "matmul needs rank-2 operands")?;
    require(
        a.shape[1] == b.shape[0],
        format!("matmul inner extents disagree: {:?} x {:?}", a.shape, b.shape),
    )?;
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    Tensor::new(vec![m, n], matmul_kernel(&a.data, &b.data, m, k, n))
}

/// Central finite differences of a scalar function at `x`.
pub fn finite_difference_grad(
    f: &mut dyn FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    require(h > 0.0, "finite difference step must be positive")?;
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let up = f(&probe)?;
        probe.data[i] = orig - h;
        let down = f(&probe)?;
        probe.data[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    Tensor::new(x.shape.clone(), grad)
}
