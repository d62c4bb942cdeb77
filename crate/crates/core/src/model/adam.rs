use serde::{Deserialize, Serialize};

use super::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moment buffers mirror the parameter store.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f32>> = params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamStore) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = (c.lr * bc2.sqrt() / bc1) as f32;
        let eps = (c.eps * bc2.sqrt()) as f32;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        for (t, (p, g)) in params.tensors.iter_mut().zip(&grads.tensors).enumerate() {
            let m = &mut self.m[t];
            let v = &mut self.v[t];
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p.data[i] -= step_size * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tensor;

    fn store(vals: &[f32]) -> ParamStore {
        ParamStore {
            tensors: vec![Tensor {
                name: "x".into(),
                shape: vec![vals.len()],
                data: vals.to_vec(),
            }],
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = store(&[1.0, -2.0, 0.5]);
        let g = store(&[0.3, -5.0, 0.0]);
        let mut opt = Adam::new(AdamConfig { lr: 0.01, ..Default::default() }, &p);
        opt.update(&mut p, &g);
        assert!((p.tensors[0].data[0] - 0.99).abs() < 1e-6);
        assert!((p.tensors[0].data[1] + 1.99).abs() < 1e-6);
        assert_eq!(p.tensors[0].data[2], 0.5);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = store(&[3.0, -4.0]);
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &p);
        for _ in 0..2000 {
            let g = store(&[2.0 * p.tensors[0].data[0], 2.0 * p.tensors[0].data[1]]);
            opt.update(&mut p, &g);
        }
        assert!(p.tensors[0].data.iter().all(|x| x.abs() < 1e-2));
        assert_eq!(opt.steps(), 2000);
    }
}
