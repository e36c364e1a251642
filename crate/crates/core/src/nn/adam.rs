use serde::{Deserialize, Serialize};

use super::{ParamGrads, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Parameters without a gradient in a step keep
/// their values and moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        for id in store.ids() {
            if let Some(g) = grads.get(id) {
                if g.shape() != store.get(id).shape() {
                    return Err(Error::shape(
                        format!("gradient of {}", store.name(id)),
                        &store.get(id).shape(),
                        &g.shape(),
                    ));
                }
                if !g.all_finite() {
                    return Err(Error::NonFiniteGradient {
                        param: store.name(id).to_string(),
                    });
                }
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for id in store.ids() {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let p = store.get_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g.data()[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g.data()[k] * g.data()[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(w: f64) -> (ParamStore, super::super::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(w));
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = one_param(1.5);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let mut g = ParamGrads::new(1);
        g.accumulate(id, &Tensor::scalar(0.0));
        adam.step(&mut s, &g).unwrap();
        assert_eq!(s.get(id).data()[0], 1.5);
    }

    #[test]
    fn quadratic_step_moves_toward_minimum() {
        let (mut s, id) = one_param(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let mut g = ParamGrads::new(1);
        g.accumulate(id, &Tensor::scalar(2.0));
        adam.step(&mut s, &g).unwrap();
        let w = s.get(id).data()[0];
        assert!(w < 1.0 && w > 0.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(w) = (w - 3)^2 + 2 (w2 + 1)^2, minimum at (3, -1).
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::row_vector(&[0.0, 0.0]));
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..Default::default()
            },
            &s,
        );
        for _ in 0..2000 {
            let w = s.get(id).data().to_vec();
            let mut g = ParamGrads::new(1);
            g.accumulate(
                id,
                &Tensor::row_vector(&[2.0 * (w[0] - 3.0), 4.0 * (w[1] + 1.0)]),
            );
            adam.step(&mut s, &g).unwrap();
        }
        let w = s.get(id).data();
        assert!(
            (w[0] - 3.0).abs() < 1e-3 && (w[1] + 1.0).abs() < 1e-3,
            "{w:?}"
        );
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut s, id) = one_param(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let mut g = ParamGrads::new(1);
        g.accumulate(id, &Tensor::scalar(f64::NAN));
        match adam.step(&mut s, &g) {
            Err(Error::NonFiniteGradient { param }) => assert_eq!(param, "w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.get(id).data()[0], 1.0);
    }
}
