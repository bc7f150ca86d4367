use crate::error::{Result, SomoError};
use crate::numerics::{ParamGrads, ParamStore, Tensor};

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Applies one update. Parameters without a gradient are treated as
    /// having a zero gradient so their moments still decay.
    pub fn update(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) -> Result<()> {
        if self.first.len() != store.len() {
            return Err(SomoError::Checkpoint(format!(
                "optimizer holds {} moment tensors, model has {} parameters",
                self.first.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let value = store.value_mut(id);
            let g = grads.get(id);
            for k in 0..value.len() {
                let gk = g.map_or(0.0, |g| g.data()[k]);
                let mk = &mut m.data_mut()[k];
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * gk;
                let vk = &mut v.data_mut()[k];
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * gk * gk;
                let m_hat = m.data()[k] / c1;
                let v_hat = v.data()[k] / c2;
                value.data_mut()[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
