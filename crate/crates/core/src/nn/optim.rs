//! Adaptive-moment (Adam) optimizer.

use super::layers::ParamRef;
use super::Real;

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter group, in a fixed order.
    pub fn step<T: Real>(&mut self, params: Vec<ParamRef<'_, T>>) {
        if self.first.is_empty() {
            self.first = params.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "parameter groups changed between steps");
        self.step += 1;
        let t = self.step as i32;
        let lr_t = self.learning_rate * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t));
        for (((p, g), m), v) in params.into_iter().zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.len() {
                let gi = g[i].f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = lr_t * m[i] / (v[i].sqrt() + self.eps);
                p[i] = T::of(p[i].f64() - update);
            }
        }
    }
}
