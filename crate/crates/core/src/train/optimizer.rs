//! Adam with decoupled weight decay.
//!
//! With a zero gradient both moments stay zero, so a step changes a
//! parameter only by the decay term `-lr * wd * theta`, exactly.

use crate::model::ModelParams;
use crate::tensor::Tensor;

pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor<f32>>,
    second: Vec<Tensor<f32>>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `grads[i]` pairs with `params.entries()[i]`; `None`
    /// means a zero gradient for that tensor.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Option<&Tensor<f32>>]) {
        let entries = params.entries_mut();
        assert_eq!(entries.len(), grads.len(), "gradient/parameter mismatch");
        if self.first.is_empty() {
            self.first = entries.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
            self.second = entries.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let bc1 = 1.0 - (self.beta1 as f32).powi(t);
        let bc2 = 1.0 - (self.beta2 as f32).powi(t);
        let lr = self.learning_rate as f32;
        let eps = self.epsilon as f32;
        let decay = (self.learning_rate * self.weight_decay) as f32;

        for (i, (_, theta)) in entries.iter_mut().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let td = theta.data_mut();
            match grads[i] {
                Some(g) => {
                    debug_assert_eq!(g.len(), td.len());
                    for (j, gv) in g.data().iter().enumerate() {
                        m[j] = b1 * m[j] + (1.0 - b1) * gv;
                        v[j] = b2 * v[j] + (1.0 - b2) * gv * gv;
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        td[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                        td[j] -= decay * td[j];
                    }
                }
                None => {
                    // moments stay zero; only the decoupled decay applies
                    for x in td.iter_mut() {
                        *x -= decay * *x;
                    }
                }
            }
        }
    }
}
