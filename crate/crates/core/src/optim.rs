//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Parameter;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.lr) && ok(self.eps) && ok(self.beta1) && ok(self.beta2))
            || self.beta1 >= 1.0
            || self.beta2 >= 1.0
        {
            return Err(Error::Contract(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment buffers for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub name: String,
    pub m: Tensor,
    pub v: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    /// Empty until the first update, then one entry per parameter in order.
    pub moments: Vec<Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            step: 0,
            moments: Vec::new(),
        })
    }

    /// One update over `params`, which must be passed in the same order on
    /// every call.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<()> {
        for p in params.iter() {
            match &p.grad {
                None => return Err(Error::MissingGradient(p.name.clone())),
                Some(g) if g.shape() != p.value.shape() => {
                    return Err(Error::dim("adam_step", p.value.shape(), g.shape()))
                }
                Some(_) => {}
            }
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    name: p.name.clone(),
                    m: Tensor::zeros(p.value.shape()),
                    v: Tensor::zeros(p.value.shape()),
                })
                .collect();
        } else if self.moments.len() != params.len()
            || self.moments.iter().zip(params.iter()).any(|(m, p)| m.name != p.name)
        {
            return Err(Error::Contract(
                "parameter set differs from the optimizer's moment buffers".into(),
            ));
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (p, mom) in params.iter_mut().zip(&mut self.moments) {
            let grad = p.grad.as_ref().expect("checked above");
            let theta = p.value.data_mut();
            let (m, v) = (mom.m.data_mut(), mom.v.data_mut());
            for i in 0..theta.len() {
                let g = grad.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub fn zero_grads(params: &mut [&mut Parameter]) {
    for p in params {
        p.grad = Some(Tensor::zeros(p.value.shape()));
    }
}
