use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam with per-parameter moment tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam { config, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update with `grads` aligned to `store`.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in store.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.shape(), g.shape(), "gradient shape");
            for (((pi, &gi), mi), vi) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![1.0, -2.0, 0.5, 3.0]));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store();
        let before = s.clone();
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.update(&mut s, &[Tensor::zeros(&[4])]);
        assert_eq!(s, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        for lr in [1e-3, 0.1, 2.0] {
            let mut s = store();
            let before = s.values()[0].clone();
            let cfg = AdamConfig { lr, ..AdamConfig::default() };
            let mut adam = Adam::new(&s, cfg);
            let g = Tensor::vector(vec![0.3, -7.0, 1e-3, -0.02]);
            adam.update(&mut s, std::slice::from_ref(&g));
            for ((after, b), gi) in s.values()[0].data().iter().zip(before.data()).zip(g.data()) {
                let delta = after - b;
                assert_eq!(delta.signum(), -gi.signum());
                // |m̂| / (sqrt(v̂) + ε) = |g| / (|g| + ε)
                let expected = lr * gi.abs() / (gi.abs() + 1e-8);
                assert!((delta.abs() - expected).abs() < 1e-12 * lr.max(1.0), "{delta}");
            }
        }
    }

    #[test]
    fn identical_calls_are_identical() {
        let run = || {
            let mut s = store();
            let mut adam = Adam::new(&s, AdamConfig::default());
            for k in 0..5 {
                let g = Tensor::vector((0..4).map(|i| ((i + k) as f64).cos()).collect());
                adam.update(&mut s, &[g]);
            }
            (s, adam)
        };
        assert_eq!(run(), run());
    }
}
