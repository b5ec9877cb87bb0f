//! Adam optimizer and the warmup-then-cosine learning-rate schedule.

use ndarray::Array2;

use super::params::ParamStore;
use super::tape::Gradients;

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let m = (0..store.len())
            .map(|i| Array2::zeros(store.value(i).dim()))
            .collect();
        let v = (0..store.len())
            .map(|i| Array2::zeros(store.value(i).dim()))
            .collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m, v }
    }

    /// One update; parameters are re-quantized to f32 afterwards so the
    /// stored f32 checkpoint is exact.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads.by_param.iter().enumerate() {
            let Some(g) = g else { continue };
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            });
            let p = store.value_mut(id);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            });
        }
        store.round_to_f32();
    }
}

/// Learning rate for 1-based step `s`: linear warmup, then cosine decay to 0.
pub fn lr_at(step: u64, base_lr: f64, warmup_steps: u64, total_steps: u64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    if warmup_steps > 0 && step <= warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return base_lr;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}
