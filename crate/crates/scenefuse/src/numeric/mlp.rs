//! Small feed-forward network: affine layers with an elementwise
//! nonlinearity on hidden layers, final layer affine only.

use super::{matmul, Tape, Tensor, Vid};
use crate::error::{require, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zero,
    /// Uniform in ±scale/sqrt(fan_in).
    Uniform(f64),
}

#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    /// (weight out×in, bias out) per layer.
    layers: Vec<(Tensor, Tensor)>,
    activation: Activation,
}

impl Mlp {
    pub fn new<R: rand::Rng>(
        widths: &[usize],
        activation: Activation,
        init: Init,
        rng: &mut R,
    ) -> Result<Mlp> {
        require(widths.len() >= 2, "an MLP needs at least input and output widths")?;
        require(widths.iter().all(|&w| w > 0), "layer widths must be positive")?;
        let mut layers = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = match init {
                Init::Zero => Tensor::zeros(vec![fan_out, fan_in]),
                Init::Uniform(scale) => {
                    let s = scale / (fan_in as f64).sqrt();
                    Tensor::uniform(rng, vec![fan_out, fan_in], -s, s)
                }
            };
            let b = Tensor::zeros(vec![fan_out]);
            layers.push((w.tracked(), b.tracked()));
        }
        Ok(Mlp { widths: widths.to_vec(), layers, activation })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn params(&self) -> impl Iterator<Item = (String, &Tensor)> {
        self.layers.iter().enumerate().flat_map(|(i, (w, b))| {
            [(format!("layer{i}.weight"), w), (format!("layer{i}.bias"), b)]
        })
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (String, &mut Tensor)> {
        self.layers.iter_mut().enumerate().flat_map(|(i, (w, b))| {
            [(format!("layer{i}.weight"), w), (format!("layer{i}.bias"), b)]
        })
    }

    /// Pure forward pass on a `(B×in)` batch (or a rank-1 `(in)` vector).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = if x.rank() == 1 {
            Tensor::new(vec![1, x.len()], x.data().to_vec())?
        } else {
            x.clone()
        };
        require(
            cur.shape()[1] == self.input_width(),
            format!("input width {} does not match first layer {}", cur.shape()[1], self.input_width()),
        )?;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let wt = Tensor::new(vec![w.shape()[1], w.shape()[0]], transpose_vec(w))?;
            let mut y = matmul(&cur, &wt)?;
            let rows = y.shape()[0];
            let cols = y.shape()[1];
            let mut data = y.data().to_vec();
            for r in 0..rows {
                for c in 0..cols {
                    data[r * cols + c] += b.data()[c];
                }
            }
            if i + 1 < self.layers.len() && self.activation == Activation::Relu {
                for v in data.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            y = Tensor::new(vec![rows, cols], data)?;
            cur = y;
        }
        if x.rank() == 1 {
            Tensor::new(vec![cur.len()], cur.data().to_vec())
        } else {
            Ok(cur)
        }
    }

    /// Registers all layer parameters on a tape; pair with [`Mlp::forward_on`].
    pub fn bind(&self, tape: &mut Tape) -> Vec<(Vid, Vid)> {
        self.layers.iter().map(|(w, b)| (tape.leaf(w), tape.leaf(b))).collect()
    }

    /// Tracked forward pass: `x` is `(B×in)` on the tape, `bound` comes from
    /// [`Mlp::bind`] on the same tape.
    pub fn forward_on(&self, tape: &mut Tape, x: Vid, bound: &[(Vid, Vid)]) -> Result<Vid> {
        require(bound.len() == self.layers.len(), "binding does not match layer count")?;
        require(
            tape.shape(x).len() == 2 && tape.shape(x)[1] == self.input_width(),
            format!("input shape {:?} does not match first layer {}", tape.shape(x), self.input_width()),
        )?;
        let mut cur = x;
        for (i, &(w, b)) in bound.iter().enumerate() {
            let wt = tape.transpose(w)?;
            let y = tape.matmul(cur, wt)?;
            cur = tape.add_row(y, b)?;
            if i + 1 < bound.len() && self.activation == Activation::Relu {
                cur = tape.relu(cur);
            }
        }
        Ok(cur)
    }
}

fn transpose_vec(w: &Tensor) -> Vec<f64> {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = w.data()[i * n + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_mlp_maps_to_zero() {
        let mut rng = crate::rng(0);
        let net = Mlp::new(&[3, 4, 2], Activation::Relu, Init::Zero, &mut rng).unwrap();
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut rng = crate::rng(0);
        let mut net = Mlp::new(&[2, 2], Activation::Relu, Init::Zero, &mut rng).unwrap();
        // set the single layer to the identity
        for (name, p) in net.params_mut() {
            if name.ends_with("weight") {
                p.apply_update(|i, _| if i == 0 || i == 3 { 1.0 } else { 0.0 });
            }
        }
        let x = Tensor::new(vec![2], vec![0.7, -1.3]).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn two_layer_hand_arithmetic() {
        let mut rng = crate::rng(0);
        let mut net = Mlp::new(&[2, 2, 1], Activation::Relu, Init::Zero, &mut rng).unwrap();
        // layer0: W = [[1, 1], [-1, 1]], b = (0, 0.5); layer1: W = [[2, 1]], b = (0.25,)
        for (name, p) in net.params_mut() {
            match name.as_str() {
                "layer0.weight" => p.apply_update(|i, _| [1.0, 1.0, -1.0, 1.0][i]),
                "layer0.bias" => p.apply_update(|i, _| [0.0, 0.5][i]),
                "layer1.weight" => p.apply_update(|i, _| [2.0, 1.0][i]),
                "layer1.bias" => p.apply_update(|_, _| 0.25),
                _ => unreachable!(),
            }
        }
        // x = (1, 1): hidden pre = (2, 0.5) -> relu (2, 0.5); out = 2*2 + 1*0.5 + 0.25 = 4.75
        let x = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let y = net.forward(&x).unwrap();
        assert_abs_diff_eq!(y.data()[0], 4.75, epsilon = 1e-12);
    }

    #[test]
    fn width_mismatch_is_contract_error() {
        let mut rng = crate::rng(0);
        let net = Mlp::new(&[3, 2], Activation::Relu, Init::Zero, &mut rng).unwrap();
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(net.forward(&x).is_err());
    }

    #[test]
    fn tape_forward_matches_pure_forward() {
        let mut rng = crate::rng(9);
        let net = Mlp::new(&[3, 5, 2], Activation::Relu, Init::Uniform(1.0), &mut rng).unwrap();
        let x = Tensor::uniform(&mut rng, vec![4, 3], -1.0, 1.0);
        let pure = net.forward(&x).unwrap();

        let mut tape = Tape::new();
        let bound = net.bind(&mut tape);
        let xid = tape.leaf(&x);
        let y = net.forward_on(&mut tape, xid, &bound).unwrap();
        for (a, b) in tape.value(y).iter().zip(pure.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}
