use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

/// Optimizer and schedule settings. Defaults are the full-scale training
/// recipe: RMSprop, lr 1e-4, rho 0.9, eps 1e-8, momentum 0.9, batch 128,
/// 100 epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            rho: 0.9,
            eps: 1e-8,
            momentum: 0.9,
            batch_size: 128,
            max_epochs: 100,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.rho)
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.batch_size >= 1;
        if ok {
            Ok(())
        } else {
            Err(NnError::Config(format!("invalid optimizer config {self:?}")))
        }
    }
}

/// RMSprop with classical momentum:
///
/// ```text
/// v   <- rho * v + (1 - rho) * g^2
/// mom <- mu * mom + lr * g / (sqrt(v) + eps)
/// w   <- w - mom
/// ```
#[derive(Debug, Clone, Default)]
pub struct RmsProp {
    square_avg: Vec<Vec<f64>>,
    velocity: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], cfg: &OptimizerConfig) -> Result<(), NnError> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape()) {
            return Err(NnError::Shape("optimizer: gradients do not match parameters".into()));
        }
        if self.square_avg.is_empty() {
            self.square_avg = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.velocity = self.square_avg.clone();
        } else if self.square_avg.len() != params.len()
            || self.square_avg.iter().zip(params.iter()).any(|(s, p)| s.len() != p.len())
        {
            return Err(NnError::Shape("optimizer state does not match parameters".into()));
        }
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (v, mom) = (&mut self.square_avg[i], &mut self.velocity[i]);
            for (j, (w, &gr)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                v[j] = cfg.rho * v[j] + (1.0 - cfg.rho) * gr * gr;
                mom[j] = cfg.momentum * mom[j] + cfg.lr * gr / (v[j].sqrt() + cfg.eps);
                *w -= mom[j];
            }
        }
        Ok(())
    }
}
