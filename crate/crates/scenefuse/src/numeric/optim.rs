//! Adam optimizer over a flat list of parameter tensors.

use super::Tensor;

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update over parameters paired with their gradients. Parameter
    /// order must be stable across calls.
    pub fn update(&mut self, params: &mut [(&mut Tensor, &[f64])]) {
        if self.m.is_empty() {
            for (p, _) in params.iter() {
                self.m.push(vec![0.0; p.len()]);
                self.v.push(vec![0.0; p.len()]);
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().enumerate() {
            debug_assert_eq!(p.len(), g.len());
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            }
            let (lr, eps) = (self.lr, self.eps);
            p.apply_update(|i, w| {
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w - lr * mh / (vh.sqrt() + eps)
            });
        }
    }
}
