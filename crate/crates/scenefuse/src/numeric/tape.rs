//! Reverse-mode gradients over a recorded operation tape.
//!
//! A forward pass records one node per tensor operation; `backward` replays
//! the tape in reverse, accumulating adjoints. One tape serves one forward
//! pass; calling `backward` twice without a fresh tape is an error.

use std::rc::Rc;

use super::{matmul_kernel, sigmoid_scalar, softmax_kernel, Tensor};
use crate::error::{require, Error, Result};

/// Handle to a value recorded on the tape.
pub type Vid = usize;

const RECIP_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Vid, Vid),
    Transpose(Vid),
    Add(Vid, Vid),
    Sub(Vid, Vid),
    Mul(Vid, Vid),
    Div(Vid, Vid),
    Neg(Vid),
    Scale(Vid, f64),
    AddScalar(Vid),
    AddRow(Vid, Vid),
    RepeatRow(Vid, usize),
    MulColBroadcast(Vid, Vid),
    Sum(Vid),
    Mean(Vid),
    Relu(Vid),
    Sigmoid(Vid),
    Exp(Vid),
    Ln(Vid),
    Abs(Vid),
    Sqrt(Vid),
    PowConst(Vid, f64),
    MaxConst(Vid, f64),
    Softmax(Vid, usize),
    Concat(Vid, Vid, usize),
    SliceRows(Vid, usize, usize),
    SliceCols(Vid, usize, usize),
    GatherRows(Vid, Rc<Vec<usize>>),
    GatherPerRow(Vid, Rc<Vec<usize>>),
    Reshape(Vid),
    MaskRowsFill(Vid, Rc<Vec<bool>>),
    VisibleRecip(Vid),
    BilinearSample(Vid, Rc<Tensor>),
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
    tracked: bool,
}

/// Recorded computation graph. Single logical thread of execution per run.
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new(), backward_done: false }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>, tracked: bool) -> Vid {
        let grad = vec![0.0; data.len()];
        self.nodes.push(Node { op, shape, data, grad, tracked });
        self.nodes.len() - 1
    }

    fn tracked(&self, id: Vid) -> bool {
        self.nodes[id].tracked
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a tensor as a leaf; gradients flow into it iff the tensor
    /// was marked with `Tensor::tracked`.
    pub fn leaf(&mut self, t: &Tensor) -> Vid {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// Registers a non-differentiable constant.
    pub fn constant(&mut self, t: &Tensor) -> Vid {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), false)
    }

    pub fn scalar(&mut self, v: f64) -> Vid {
        self.push(Op::Leaf, vec![1], vec![v], false)
    }

    pub fn value(&self, id: Vid) -> &[f64] {
        &self.nodes[id].data
    }

    pub fn shape(&self, id: Vid) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn to_tensor(&self, id: Vid) -> Tensor {
        Tensor::new(self.nodes[id].shape.clone(), self.nodes[id].data.clone())
            .expect("tape node shapes are consistent by construction")
    }

    /// Adjoint of a node after `backward`.
    pub fn grad(&self, id: Vid) -> Result<&[f64]> {
        require(self.backward_done, "gradients requested before backward")?;
        Ok(&self.nodes[id].grad)
    }

    fn rows_cols(&self, id: Vid) -> Result<(usize, usize)> {
        let s = &self.nodes[id].shape;
        require(s.len() == 2, format!("rank-2 tensor required, got shape {s:?}"))?;
        Ok((s[0], s[1]))
    }

    // ── op constructors ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: Vid, b: Vid) -> Result<Vid> {
        let (m, ka) = self.rows_cols(a)?;
        let (kb, n) = self.rows_cols(b)?;
        require(ka == kb, format!("matmul inner extents disagree: {ka} vs {kb}"))?;
        let data = matmul_kernel(&self.nodes[a].data, &self.nodes[b].data, m, ka, n);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::MatMul(a, b), vec![m, n], data, tracked))
    }

    pub fn transpose(&mut self, a: Vid) -> Result<Vid> {
        let (m, n) = self.rows_cols(a)?;
        let src = &self.nodes[a].data;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let tracked = self.tracked(a);
        Ok(self.push(Op::Transpose(a), vec![n, m], data, tracked))
    }

    fn same_shape(&self, a: Vid, b: Vid) -> Result<()> {
        require(
            self.nodes[a].shape == self.nodes[b].shape,
            format!("shape mismatch: {:?} vs {:?}", self.nodes[a].shape, self.nodes[b].shape),
        )
    }

    pub fn add(&mut self, a: Vid, b: Vid) -> Result<Vid> {
        self.same_shape(a, b)?;
        let data = self.zip(a, b, |x, y| x + y);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::Add(a, b), self.nodes[a].shape.clone(), data, tracked))
    }

    pub fn sub(&mut self, a: Vid, b: Vid) -> Result<Vid> {
        self.same_shape(a, b)?;
        let data = self.zip(a, b, |x, y| x - y);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::Sub(a, b), self.nodes[a].shape.clone(), data, tracked))
    }

    pub fn mul(&mut self, a: Vid, b: Vid) -> Result<Vid> {
        self.same_shape(a, b)?;
        let data = self.zip(a, b, |x, y| x * y);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::Mul(a, b), self.nodes[a].shape.clone(), data, tracked))
    }

    pub fn div(&mut self, a: Vid, b: Vid) -> Result<Vid> {
        self.same_shape(a, b)?;
        let data = self.zip(a, b, |x, y| x / y);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::Div(a, b), self.nodes[a].shape.clone(), data, tracked))
    }

    fn zip(&self, a: Vid, b: Vid, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    fn map(&mut self, a: Vid, op: Op, f: impl Fn(f64) -> f64) -> Vid {
        let data = self.nodes[a].data.iter().map(|&x| f(x)).collect();
        let tracked = self.tracked(a);
        self.push(op, self.nodes[a].shape.clone(), data, tracked)
    }

    pub fn neg(&mut self, a: Vid) -> Vid {
        self.map(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&mut self, a: Vid, c: f64) -> Vid {
        self.map(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Vid, c: f64) -> Vid {
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn relu(&mut self, a: Vid) -> Vid {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Vid) -> Vid {
        self.map(a, Op::Sigmoid(a), sigmoid_scalar)
    }

    pub fn exp(&mut self, a: Vid) -> Vid {
        self.map(a, Op::Exp(a), |x| x.clamp(-40.0, 40.0).exp())
    }

    /// Natural log; callers clamp the argument positive first.
    pub fn ln(&mut self, a: Vid) -> Vid {
        self.map(a, Op::Ln(a), |x| x.ln())
    }

    pub fn abs(&mut self, a: Vid) -> Vid {
        self.map(a, Op::Abs(a), |x| x.abs())
    }

    pub fn sqrt(&mut self, a: Vid) -> Vid {
        self.map(a, Op::Sqrt(a), |x| x.sqrt())
    }

    pub fn pow_const(&mut self, a: Vid, e: f64) -> Vid {
        self.map(a, Op::PowConst(a, e), |x| x.powf(e))
    }

    pub fn max_const(&mut self, a: Vid, c: f64) -> Vid {
        self.map(a, Op::MaxConst(a, c), |x| x.max(c))
    }

    /// `1/x` where `x > 1e-9`, else 0. Projection helper: rows behind the
    /// camera produce zero instead of an unbounded reciprocal.
    pub fn visible_recip(&mut self, a: Vid) -> Vid {
        self.map(a, Op::VisibleRecip(a), |x| if x > RECIP_EPS { 1.0 / x } else { 0.0 })
    }

    /// `(N×D) + (D)`, bias broadcast over rows.
    pub fn add_row(&mut self, a: Vid, row: Vid) -> Result<Vid> {
        let (n, d) = self.rows_cols(a)?;
        require(
            self.nodes[row].shape == vec![d],
            format!("bias width {:?} does not match {d}", self.nodes[row].shape),
        )?;
        let mut data = self.nodes[a].data.clone();
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] += self.nodes[row].data[j];
            }
        }
        let tracked = self.tracked(a) || self.tracked(row);
        Ok(self.push(Op::AddRow(a, row), vec![n, d], data, tracked))
    }

    /// `(D)` replicated into `(N×D)`.
    pub fn repeat_row(&mut self, row: Vid, n: usize) -> Result<Vid> {
        require(self.nodes[row].shape.len() == 1, "repeat_row needs a rank-1 input")?;
        require(n > 0, "repeat_row needs n > 0")?;
        let d = self.nodes[row].data.len();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(&self.nodes[row].data);
        }
        let tracked = self.tracked(row);
        Ok(self.push(Op::RepeatRow(row, n), vec![n, d], data, tracked))
    }

    /// `(N×D) ⊙ (N×1)`: each row scaled by its own coefficient.
    pub fn mul_col_broadcast(&mut self, a: Vid, col: Vid) -> Result<Vid> {
        let (n, d) = self.rows_cols(a)?;
        require(
            self.nodes[col].shape == vec![n, 1],
            format!("column shape {:?} does not match ({n}×1)", self.nodes[col].shape),
        )?;
        let mut data = self.nodes[a].data.clone();
        for i in 0..n {
            let c = self.nodes[col].data[i];
            for j in 0..d {
                data[i * d + j] *= c;
            }
        }
        let tracked = self.tracked(a) || self.tracked(col);
        Ok(self.push(Op::MulColBroadcast(a, col), vec![n, d], data, tracked))
    }

    pub fn sum(&mut self, a: Vid) -> Vid {
        let s: f64 = self.nodes[a].data.iter().sum();
        let tracked = self.tracked(a);
        self.push(Op::Sum(a), vec![1], vec![s], tracked)
    }

    pub fn mean(&mut self, a: Vid) -> Vid {
        let n = self.nodes[a].data.len() as f64;
        let s: f64 = self.nodes[a].data.iter().sum::<f64>() / n;
        let tracked = self.tracked(a);
        self.push(Op::Mean(a), vec![1], vec![s], tracked)
    }

    pub fn softmax(&mut self, a: Vid, axis: usize) -> Result<Vid> {
        let shape = self.nodes[a].shape.clone();
        require(axis < shape.len(), format!("softmax axis {axis} out of range"))?;
        let mut out = vec![0.0; self.nodes[a].data.len()];
        softmax_kernel(&self.nodes[a].data, &shape, axis, &mut out);
        let tracked = self.tracked(a);
        Ok(self.push(Op::Softmax(a, axis), shape, out, tracked))
    }

    /// Concatenation along `axis` (rank-1 axis 0, or rank-2 axis 0/1).
    pub fn concat(&mut self, a: Vid, b: Vid, axis: usize) -> Result<Vid> {
        let sa = self.nodes[a].shape.clone();
        let sb = self.nodes[b].shape.clone();
        require(sa.len() == sb.len(), "concat rank mismatch")?;
        let tracked = self.tracked(a) || self.tracked(b);
        match (sa.len(), axis) {
            (1, 0) => {
                let mut data = self.nodes[a].data.clone();
                data.extend_from_slice(&self.nodes[b].data);
                let n = data.len();
                Ok(self.push(Op::Concat(a, b, 0), vec![n], data, tracked))
            }
            (2, 0) => {
                require(sa[1] == sb[1], "concat axis 0 needs equal widths")?;
                let mut data = self.nodes[a].data.clone();
                data.extend_from_slice(&self.nodes[b].data);
                Ok(self.push(Op::Concat(a, b, 0), vec![sa[0] + sb[0], sa[1]], data, tracked))
            }
            (2, 1) => {
                require(sa[0] == sb[0], "concat axis 1 needs equal row counts")?;
                let (n, da, db) = (sa[0], sa[1], sb[1]);
                let mut data = Vec::with_capacity(n * (da + db));
                for i in 0..n {
                    data.extend_from_slice(&self.nodes[a].data[i * da..(i + 1) * da]);
                    data.extend_from_slice(&self.nodes[b].data[i * db..(i + 1) * db]);
                }
                Ok(self.push(Op::Concat(a, b, 1), vec![n, da + db], data, tracked))
            }
            _ => Err(Error::contract(format!("concat unsupported for rank {} axis {axis}", sa.len()))),
        }
    }

    pub fn slice_rows(&mut self, a: Vid, start: usize, end: usize) -> Result<Vid> {
        let (n, d) = self.rows_cols(a)?;
        require(start < end && end <= n, format!("row slice {start}..{end} out of range 0..{n}"))?;
        let data = self.nodes[a].data[start * d..end * d].to_vec();
        let tracked = self.tracked(a);
        Ok(self.push(Op::SliceRows(a, start, end), vec![end - start, d], data, tracked))
    }

    pub fn slice_cols(&mut self, a: Vid, start: usize, end: usize) -> Result<Vid> {
        let (n, d) = self.rows_cols(a)?;
        require(start < end && end <= d, format!("col slice {start}..{end} out of range 0..{d}"))?;
        let w = end - start;
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&self.nodes[a].data[i * d + start..i * d + end]);
        }
        let tracked = self.tracked(a);
        Ok(self.push(Op::SliceCols(a, start, end), vec![n, w], data, tracked))
    }

    pub fn gather_rows(&mut self, a: Vid, indices: Vec<usize>) -> Result<Vid> {
        let (n, d) = self.rows_cols(a)?;
        require(indices.iter().all(|&i| i < n), "gather index out of range")?;
        require(!indices.is_empty(), "gather needs at least one index")?;
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in &indices {
            data.extend_from_slice(&self.nodes[a].data[i * d..(i + 1) * d]);
        }
        let tracked = self.tracked(a);
        let k = indices.len();
        Ok(self.push(Op::GatherRows(a, Rc::new(indices)), vec![k, d], data, tracked))
    }

    /// `(N×K)` with one column index per row → `(N×1)`.
    pub fn gather_per_row(&mut self, a: Vid, indices: Vec<usize>) -> Result<Vid> {
        let (n, d) = self.rows_cols(a)?;
        require(indices.len() == n, "gather_per_row needs one index per row")?;
        require(indices.iter().all(|&i| i < d), "gather_per_row index out of range")?;
        let data: Vec<f64> =
            indices.iter().enumerate().map(|(i, &j)| self.nodes[a].data[i * d + j]).collect();
        let tracked = self.tracked(a);
        Ok(self.push(Op::GatherPerRow(a, Rc::new(indices)), vec![n, 1], data, tracked))
    }

    pub fn reshape(&mut self, a: Vid, shape: Vec<usize>) -> Result<Vid> {
        require(
            shape.iter().product::<usize>() == self.nodes[a].data.len(),
            format!("reshape {:?} incompatible with {} elements", shape, self.nodes[a].data.len()),
        )?;
        let data = self.nodes[a].data.clone();
        let tracked = self.tracked(a);
        Ok(self.push(Op::Reshape(a), shape, data, tracked))
    }

    /// Rows where `keep` is false are replaced with `fill`; gradients flow
    /// only through kept rows.
    pub fn mask_rows_fill(&mut self, a: Vid, keep: Vec<bool>, fill: f64) -> Result<Vid> {
        let (n, d) = self.rows_cols(a)?;
        require(keep.len() == n, "mask length must equal row count")?;
        let mut data = self.nodes[a].data.clone();
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                for j in 0..d {
                    data[i * d + j] = fill;
                }
            }
        }
        let tracked = self.tracked(a);
        Ok(self.push(Op::MaskRowsFill(a, Rc::new(keep)), vec![n, d], data, tracked))
    }

    /// Bilinear image sampling of a constant `(C,H,W)` map at `(N×2)`
    /// pixel coordinates `(u,v)`. Out-of-bounds rows sample zero.
    /// Gradients flow into the coordinates, not the map.
    pub fn bilinear_sample(&mut self, map: Rc<Tensor>, coords: Vid) -> Result<Vid> {
        require(map.rank() == 3, "feature map must have shape (C,H,W)")?;
        let (n, two) = self.rows_cols(coords)?;
        require(two == 2, "coordinates must be (N×2)")?;
        let c = map.shape()[0];
        let mut data = vec![0.0; n * c];
        for i in 0..n {
            let u = self.nodes[coords].data[i * 2];
            let v = self.nodes[coords].data[i * 2 + 1];
            let mut row = vec![0.0; c];
            bilinear_forward(&map, u, v, &mut row);
            data[i * c..(i + 1) * c].copy_from_slice(&row);
        }
        let tracked = self.tracked(coords);
        Ok(self.push(Op::BilinearSample(coords, map), vec![n, c], data, tracked))
    }

    // ── backward pass ────────────────────────────────────────────────

    /// Accumulates d loss / d node for every tracked node. `loss` must be
    /// scalar; repeated calls on one tape are an error.
    pub fn backward(&mut self, loss: Vid) -> Result<()> {
        require(self.nodes[loss].data.len() == 1, "backward requires a scalar loss")?;
        require(!self.backward_done, "backward called twice on one tape")?;
        self.backward_done = true;
        self.nodes[loss].grad[0] = 1.0;

        for id in (0..=loss).rev() {
            if !self.nodes[id].tracked {
                continue;
            }
            let op = self.nodes[id].op.clone();
            let g = self.nodes[id].grad.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                    let n = self.nodes[b].shape[1];
                    if self.tracked(a) {
                        // dA = G · Bᵀ
                        let bt = transpose_data(&self.nodes[b].data, k, n);
                        let da = matmul_kernel(&g, &bt, m, n, k);
                        accumulate(&mut self.nodes[a].grad, &da);
                    }
                    if self.tracked(b) {
                        // dB = Aᵀ · G
                        let at = transpose_data(&self.nodes[a].data, m, k);
                        let db = matmul_kernel(&at, &g, k, m, n);
                        accumulate(&mut self.nodes[b].grad, &db);
                    }
                }
                Op::Transpose(a) => {
                    let (n, m) = (self.nodes[id].shape[0], self.nodes[id].shape[1]);
                    let gt = transpose_data(&g, n, m);
                    accumulate(&mut self.nodes[a].grad, &gt);
                }
                Op::Add(a, b) => {
                    accumulate(&mut self.nodes[a].grad, &g);
                    accumulate(&mut self.nodes[b].grad, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut self.nodes[a].grad, &g);
                    for (gb, &gi) in self.nodes[b].grad.iter_mut().zip(&g) {
                        *gb -= gi;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.nodes[a].data.clone(), self.nodes[b].data.clone());
                    for i in 0..g.len() {
                        self.nodes[a].grad[i] += g[i] * bv[i];
                    }
                    for i in 0..g.len() {
                        self.nodes[b].grad[i] += g[i] * av[i];
                    }
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.nodes[a].data.clone(), self.nodes[b].data.clone());
                    for i in 0..g.len() {
                        if g[i] != 0.0 {
                            self.nodes[a].grad[i] += g[i] / bv[i];
                        }
                    }
                    for i in 0..g.len() {
                        if g[i] != 0.0 {
                            self.nodes[b].grad[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                        }
                    }
                }
                Op::Neg(a) => {
                    for (ga, &gi) in self.nodes[a].grad.iter_mut().zip(&g) {
                        *ga -= gi;
                    }
                }
                Op::Scale(a, c) => {
                    for (ga, &gi) in self.nodes[a].grad.iter_mut().zip(&g) {
                        *ga += c * gi;
                    }
                }
                Op::AddScalar(a) => accumulate(&mut self.nodes[a].grad, &g),
                Op::AddRow(a, row) => {
                    accumulate(&mut self.nodes[a].grad, &g);
                    let d = self.nodes[row].grad.len();
                    let n = g.len() / d;
                    for i in 0..n {
                        for j in 0..d {
                            self.nodes[row].grad[j] += g[i * d + j];
                        }
                    }
                }
                Op::RepeatRow(row, n) => {
                    let d = self.nodes[row].grad.len();
                    for i in 0..n {
                        for j in 0..d {
                            self.nodes[row].grad[j] += g[i * d + j];
                        }
                    }
                }
                Op::MulColBroadcast(a, col) => {
                    let d = self.nodes[a].shape[1];
                    let n = self.nodes[a].shape[0];
                    let colv = self.nodes[col].data.clone();
                    let av = self.nodes[a].data.clone();
                    for i in 0..n {
                        for j in 0..d {
                            self.nodes[a].grad[i * d + j] += g[i * d + j] * colv[i];
                        }
                    }
                    for i in 0..n {
                        let mut s = 0.0;
                        for j in 0..d {
                            s += g[i * d + j] * av[i * d + j];
                        }
                        self.nodes[col].grad[i] += s;
                    }
                }
                Op::Sum(a) => {
                    for ga in self.nodes[a].grad.iter_mut() {
                        *ga += g[0];
                    }
                }
                Op::Mean(a) => {
                    let n = self.nodes[a].grad.len() as f64;
                    for ga in self.nodes[a].grad.iter_mut() {
                        *ga += g[0] / n;
                    }
                }
                Op::Relu(a) => {
                    let av = self.nodes[a].data.clone();
                    for i in 0..g.len() {
                        if av[i] > 0.0 {
                            self.nodes[a].grad[i] += g[i];
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let ov = self.nodes[id].data.clone();
                    for i in 0..g.len() {
                        self.nodes[a].grad[i] += g[i] * ov[i] * (1.0 - ov[i]);
                    }
                }
                Op::Exp(a) => {
                    let ov = self.nodes[id].data.clone();
                    for i in 0..g.len() {
                        self.nodes[a].grad[i] += g[i] * ov[i];
                    }
                }
                Op::Ln(a) => {
                    let av = self.nodes[a].data.clone();
                    for i in 0..g.len() {
                        if g[i] != 0.0 {
                            self.nodes[a].grad[i] += g[i] / av[i];
                        }
                    }
                }
                Op::Abs(a) => {
                    let av = self.nodes[a].data.clone();
                    for i in 0..g.len() {
                        // subgradient 0 at the kink
                        if av[i] > 0.0 {
                            self.nodes[a].grad[i] += g[i];
                        } else if av[i] < 0.0 {
                            self.nodes[a].grad[i] -= g[i];
                        }
                    }
                }
                Op::Sqrt(a) => {
                    let ov = self.nodes[id].data.clone();
                    for i in 0..g.len() {
                        if g[i] != 0.0 {
                            self.nodes[a].grad[i] += g[i] / (2.0 * ov[i]);
                        }
                    }
                }
                Op::PowConst(a, e) => {
                    let av = self.nodes[a].data.clone();
                    for i in 0..g.len() {
                        if g[i] != 0.0 {
                            self.nodes[a].grad[i] += g[i] * e * av[i].powf(e - 1.0);
                        }
                    }
                }
                Op::MaxConst(a, c) => {
                    let av = self.nodes[a].data.clone();
                    for i in 0..g.len() {
                        if av[i] >= c {
                            self.nodes[a].grad[i] += g[i];
                        }
                    }
                }
                Op::Softmax(a, axis) => {
                    let shape = self.nodes[id].shape.clone();
                    let s = self.nodes[id].data.clone();
                    let len = shape[axis];
                    let inner: usize = shape[axis + 1..].iter().product();
                    let outer: usize = shape[..axis].iter().product();
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| o * len * inner + k * inner + i;
                            let mut dot = 0.0;
                            for k in 0..len {
                                dot += g[idx(k)] * s[idx(k)];
                            }
                            for k in 0..len {
                                self.nodes[a].grad[idx(k)] += s[idx(k)] * (g[idx(k)] - dot);
                            }
                        }
                    }
                }
                Op::Concat(a, b, axis) => {
                    let sa = self.nodes[a].shape.clone();
                    let sb = self.nodes[b].shape.clone();
                    match (sa.len(), axis) {
                        (1, 0) | (2, 0) => {
                            let na = self.nodes[a].grad.len();
                            accumulate(&mut self.nodes[a].grad, &g[..na]);
                            accumulate(&mut self.nodes[b].grad, &g[na..]);
                        }
                        (2, 1) => {
                            let (n, da, db) = (sa[0], sa[1], sb[1]);
                            let w = da + db;
                            for i in 0..n {
                                for j in 0..da {
                                    self.nodes[a].grad[i * da + j] += g[i * w + j];
                                }
                                for j in 0..db {
                                    self.nodes[b].grad[i * db + j] += g[i * w + da + j];
                                }
                            }
                        }
                        _ => unreachable!("concat shapes validated at construction"),
                    }
                }
                Op::SliceRows(a, start, _end) => {
                    let d = self.nodes[a].shape[1];
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[a].grad[start * d + i] += gi;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let d = self.nodes[a].shape[1];
                    let w = end - start;
                    let n = self.nodes[a].shape[0];
                    for i in 0..n {
                        for j in 0..w {
                            self.nodes[a].grad[i * d + start + j] += g[i * w + j];
                        }
                    }
                }
                Op::GatherRows(a, indices) => {
                    let d = self.nodes[a].shape[1];
                    for (k, &i) in indices.iter().enumerate() {
                        for j in 0..d {
                            self.nodes[a].grad[i * d + j] += g[k * d + j];
                        }
                    }
                }
                Op::GatherPerRow(a, indices) => {
                    let d = self.nodes[a].shape[1];
                    for (i, &j) in indices.iter().enumerate() {
                        self.nodes[a].grad[i * d + j] += g[i];
                    }
                }
                Op::Reshape(a) => accumulate(&mut self.nodes[a].grad, &g),
                Op::MaskRowsFill(a, keep) => {
                    let d = self.nodes[a].shape[1];
                    for (i, &k) in keep.iter().enumerate() {
                        if k {
                            for j in 0..d {
                                self.nodes[a].grad[i * d + j] += g[i * d + j];
                            }
                        }
                    }
                }
                Op::VisibleRecip(a) => {
                    let av = self.nodes[a].data.clone();
                    for i in 0..g.len() {
                        if g[i] != 0.0 && av[i] > RECIP_EPS {
                            self.nodes[a].grad[i] -= g[i] / (av[i] * av[i]);
                        }
                    }
                }
                Op::BilinearSample(coords, map) => {
                    let c = map.shape()[0];
                    let n = self.nodes[id].shape[0];
                    for i in 0..n {
                        let u = self.nodes[coords].data[i * 2];
                        let v = self.nodes[coords].data[i * 2 + 1];
                        let (du, dv) = bilinear_backward(&map, u, v, &g[i * c..(i + 1) * c]);
                        self.nodes[coords].grad[i * 2] += du;
                        self.nodes[coords].grad[i * 2 + 1] += dv;
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn transpose_data(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// 4-neighbor bilinear blend; coordinates outside `[0,W−1]×[0,H−1]` yield
/// the zero vector. Pixel centers sit at integer coordinates.
pub fn bilinear_forward(map: &Tensor, u: f64, v: f64, out: &mut [f64]) {
    let (c, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    out.iter_mut().for_each(|o| *o = 0.0);
    if !(u >= 0.0 && u <= (w - 1) as f64 && v >= 0.0 && v <= (h - 1) as f64) {
        return;
    }
    let (u0, v0, a, b) = cell_of(u, v, w, h);
    let (u1, v1) = ((u0 + 1).min(w - 1), (v0 + 1).min(h - 1));
    let data = map.data();
    for ch in 0..c {
        let base = ch * h * w;
        let p00 = data[base + v0 * w + u0];
        let p10 = data[base + v0 * w + u1];
        let p01 = data[base + v1 * w + u0];
        let p11 = data[base + v1 * w + u1];
        out[ch] = (1.0 - a) * (1.0 - b) * p00 + a * (1.0 - b) * p10 + (1.0 - a) * b * p01 + a * b * p11;
    }
}

fn bilinear_backward(map: &Tensor, u: f64, v: f64, g: &[f64]) -> (f64, f64) {
    let (c, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    if !(u >= 0.0 && u <= (w - 1) as f64 && v >= 0.0 && v <= (h - 1) as f64) {
        return (0.0, 0.0);
    }
    let (u0, v0, a, b) = cell_of(u, v, w, h);
    let (u1, v1) = ((u0 + 1).min(w - 1), (v0 + 1).min(h - 1));
    let data = map.data();
    let (mut du, mut dv) = (0.0, 0.0);
    for ch in 0..c {
        if g[ch] == 0.0 {
            continue;
        }
        let base = ch * h * w;
        let p00 = data[base + v0 * w + u0];
        let p10 = data[base + v0 * w + u1];
        let p01 = data[base + v1 * w + u0];
        let p11 = data[base + v1 * w + u1];
        du += g[ch] * ((1.0 - b) * (p10 - p00) + b * (p11 - p01));
        dv += g[ch] * ((1.0 - a) * (p01 - p00) + a * (p11 - p10));
    }
    (du, dv)
}

/// Integer cell and fractional offsets, clamped so the +1 neighbor stays
/// in range (the top edge uses the last interior cell with fraction 1).
fn cell_of(u: f64, v: f64, w: usize, h: usize) -> (usize, usize, f64, f64) {
    let u0 = (u.floor() as usize).min(w.saturating_sub(2));
    let v0 = (v.floor() as usize).min(h.saturating_sub(2));
    (u0, v0, u - u0 as f64, v - v0 as f64)
}
