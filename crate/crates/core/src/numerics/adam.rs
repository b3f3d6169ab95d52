use super::params::ParameterSet;
use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Adam hyperparameters. The learning rate default follows the training
/// setup; the moment decay rates and epsilon are the conventional values.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.004,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParameterSet<T>, cfg: AdamConfig) -> Self {
        let m = params
            .iter()
            .map(|p| {
                if p.trainable {
                    vec![T::ZERO; p.value.numel()]
                } else {
                    Vec::new()
                }
            })
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState {
            cfg,
            step: 0,
            m,
            v,
        }
    }

    /// One bias-corrected Adam update over every trainable parameter.
    /// Every trainable parameter must have an accumulated gradient.
    pub fn step(&mut self, params: &mut ParameterSet<T>) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        let lr = T::from_f64(self.cfg.lr);
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let one_m_b1 = T::from_f64(1.0 - self.cfg.beta1);
        let one_m_b2 = T::from_f64(1.0 - self.cfg.beta2);
        let inv_bc1 = T::from_f64(1.0 / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(self.cfg.eps);

        for idx in 0..params.len() {
            let p = params.at_mut(idx);
            if !p.trainable {
                continue;
            }
            let grad = p.grad.as_ref().ok_or_else(|| {
                Error::numeric(format!("adam: missing gradient for parameter {}", p.name))
            })?;
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            debug_assert_eq!(m.len(), grad.len());
            let data = p.value.data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + one_m_b1 * g;
                v[i] = b2 * v[i] + one_m_b2 * g * g;
                let mhat = m[i] * inv_bc1;
                let vhat = v[i] * inv_bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn moments(&self, idx: usize) -> (&[T], &[T]) {
        (&self.m[idx], &self.v[idx])
    }

    pub fn moments_mut(&mut self, idx: usize) -> (&mut Vec<T>, &mut Vec<T>) {
        // Split borrow through raw indexing to hand both slots back.
        let m = &mut self.m[idx] as *mut Vec<T>;
        let v = &mut self.v[idx];
        (unsafe { &mut *m }, v)
    }
}
