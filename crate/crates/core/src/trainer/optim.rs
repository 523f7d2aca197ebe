use crate::autodiff::Real;
use crate::supernet::{Region, SupernetWeights};

/// Half-cosine decay from `init` at step 0 to `last` at step `steps - 1`.
pub fn cosine_lr(step: usize, steps: usize, init: f64, last: f64) -> f64 {
    if steps <= 1 {
        return init;
    }
    let t = step as f64 / (steps - 1) as f64;
    last + 0.5 * (init - last) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Adam with decoupled weight decay. Moments live at full supernet size but
/// only entries inside the stepped regions are touched.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Real> AdamW<T> {
    pub fn new(weights: &SupernetWeights<T>, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<T>> = weights.params().iter().map(|p| vec![T::zero(); p.tensor.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, m: zeros.clone(), v: zeros, t: 0 }
    }

    /// `grads[i]` is the dense gradient of `regions[i]`.
    pub fn step(&mut self, weights: &mut SupernetWeights<T>, regions: &[Region], grads: &[&[T]], lr: T) {
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let c1 = one - T::from_f64(self.beta1.powi(self.t));
        let c2 = one - T::from_f64(self.beta2.powi(self.t));
        let eps = T::from_f64(self.eps);
        for (region, g) in regions.iter().zip(grads) {
            let decay = if weights.params()[region.param].role.is_matrix() {
                one - lr * T::from_f64(self.weight_decay)
            } else {
                one
            };
            let tensor = weights.tensor_mut(region.param);
            let full_cols = tensor.cols();
            let theta = tensor.data_mut();
            let (m, v) = (&mut self.m[region.param], &mut self.v[region.param]);
            for r in 0..region.rows {
                for c in 0..region.cols {
                    let i = r * full_cols + c;
                    let gi = g[r * region.cols + c];
                    m[i] = b1 * m[i] + (one - b1) * gi;
                    v[i] = b2 * v[i] + (one - b2) * gi * gi;
                    let update = (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    theta[i] = theta[i] * decay - lr * update;
                }
            }
        }
    }
}
