//! Adam with step-wise exponential learning-rate decay.

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64, decay_rate: f64, decay_steps: u64) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.rows, t.cols))
            .collect();
        Adam {
            learning_rate,
            decay_rate,
            decay_steps: decay_steps.max(1),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Rate in effect after `step` updates: the base rate times
    /// `decay_rate` once per completed block of `decay_steps`.
    pub fn rate_at(&self, step: u64) -> f64 {
        self.learning_rate * self.decay_rate.powi((step / self.decay_steps) as i32)
    }

    pub fn current_rate(&self) -> f64 {
        self.rate_at(self.step)
    }

    /// Every parameter is updated, including those without a gradient this
    /// step (their moment estimates keep decaying).
    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients) {
        let lr = self.current_rate();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let g = grads.get(id);
            let p = store.get_mut(id);
            for k in 0..p.data.len() {
                let gk = g.map_or(0.0, |g| g.data[k]);
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = m.data[k] / bc1;
                let vhat = v.data[k] / bc2;
                p.data[k] -= lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
    }
}
