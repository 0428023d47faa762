use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Adam with decoupled weight decay. Biases are not decayed.
#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: AdamWConfig,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every parameter whose `trainable` flag is set. `params` and
    /// `grads` must line up and keep the same shapes from call to call.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Array2<f64>)],
        grads: &[Array2<f64>],
        trainable: &[bool],
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != trainable.len() {
            return Err(Error::Dimension(format!(
                "{} parameters, {} gradients, {} flags",
                params.len(),
                grads.len(),
                trainable.len()
            )));
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, ((name, p), g)) in params.iter_mut().zip(grads).enumerate() {
            if !trainable[k] {
                continue;
            }
            if p.raw_dim() != g.raw_dim() {
                return Err(Error::Dimension(format!(
                    "gradient shape {:?} for `{name}` of shape {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let decay = if name.ends_with("bias") || name.ends_with(".b1") || name.ends_with(".b2")
            {
                0.0
            } else {
                weight_decay
            };
            Zip::from(&mut **p)
                .and(&mut self.first[k])
                .and(&mut self.second[k])
                .and(g)
                .for_each(|w, m, v, &gv| {
                    *m = beta1 * *m + (1.0 - beta1) * gv;
                    *v = beta2 * *v + (1.0 - beta2) * gv * gv;
                    let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                    *w -= lr * (update + decay * *w);
                });
        }
        Ok(())
    }
}
