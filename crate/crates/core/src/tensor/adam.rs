use serde::{Deserialize, Serialize};

use super::{ParamId, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied as `p -= lr * weight_decay * p` before the Adam step.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Adam with bias correction and per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = |s: &ParamStore<T>| {
            s.iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect()
        };
        Adam {
            config,
            step: 0,
            first: zeros(store),
            second: zeros(store),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.first, &self.second)
    }

    /// Restores optimizer state from a checkpoint.
    pub fn restore(&mut self, step: u64, first: Vec<Tensor<T>>, second: Vec<Tensor<T>>) {
        assert_eq!(first.len(), self.first.len());
        assert_eq!(second.len(), self.second.len());
        self.step = step;
        self.first = first;
        self.second = second;
    }

    /// One update over every parameter. Parameters missing from `grads` are
    /// treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) {
        self.step += 1;
        let c = self.config;
        let (lr, b1, b2, eps, wd) = (
            T::of(c.lr),
            T::of(c.beta1),
            T::of(c.beta2),
            T::of(c.eps),
            T::of(c.weight_decay),
        );
        let t = self.step as i32;
        let bc1 = T::one() - T::of(c.beta1.powi(t));
        let bc2 = T::one() - T::of(c.beta2.powi(t));

        let mut dense: Vec<Option<&Tensor<T>>> = vec![None; store.len()];
        for (id, g) in grads {
            dense[id.index()] = Some(g);
        }

        for (i, slot) in dense.into_iter().enumerate() {
            let id = ParamId(i);
            let value = store.value_mut(id);
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, p) in value.data_mut().iter_mut().enumerate() {
                let g = slot.map_or(T::zero(), |g| g.data()[j]);
                if wd != T::zero() {
                    *p = *p - lr * wd * *p;
                }
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
