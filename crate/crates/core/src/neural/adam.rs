use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{FreezeMask, NetworkParams};
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam. Frozen groups are skipped entirely.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub t: u64,
    m: NetworkParams<T>,
    v: NetworkParams<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &NetworkParams<T>) -> Self {
        Self {
            config,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut NetworkParams<T>, grads: &NetworkParams<T>, mask: &FreezeMask) {
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let one = T::one();
        let bc1 = one - b1.powi(self.t.min(i32::MAX as u64) as i32);
        let bc2 = one - b2.powi(self.t.min(i32::MAX as u64) as i32);
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        let gs = grads.tensors();
        for ((((_, group, mut p), (_, _, g)), (_, _, mut m)), (_, _, mut v)) in params
            .tensors_mut()
            .into_iter()
            .zip(gs)
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            if mask.is_frozen(group) {
                continue;
            }
            Zip::from(&mut p).and(&g).and(&mut m).and(&mut v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            });
        }
    }
}
