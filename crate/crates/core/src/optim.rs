//! Adam without weight decay or schedule.

use std::collections::HashMap;

use crate::nn::{ParamId, ParamStore};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    moments: HashMap<ParamId, (Tensor<T>, Tensor<T>)>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. With `lr == 0` the store is left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: Vec<(ParamId, Tensor<T>)>) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let [b1, b2, eps] = [beta1, beta2, eps].map(T::from_f64_lossy);
        let (one, step_size, bc2_sqrt) = (
            T::one(),
            T::from_f64_lossy(lr / bc1),
            T::from_f64_lossy(bc2.sqrt()),
        );
        for (id, g) in grads {
            let shape = g.shape();
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (Tensor::zeros(shape), Tensor::zeros(shape)));
            for ((mi, vi), &gi) in m.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
            }
            if lr == 0.0 {
                continue;
            }
            let p = store.get_mut(id);
            for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                *pi -= step_size * mi / (vi.sqrt() / bc2_sqrt + eps);
            }
        }
    }
}
