use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::model::{Dense, ToyDenoiser};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::Adam {
            lr: 1e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            Self::Sgd { lr, .. } | Self::Adam { lr, .. } => lr,
        }
    }

    pub fn with_lr(mut self, new: f64) -> Self {
        match &mut self {
            Self::Sgd { lr, .. } | Self::Adam { lr, .. } => *lr = new,
        }
        self
    }
}

/// Optimizer with per-parameter state.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    /// Multiplies the configured learning rate (for step decay).
    pub lr_scale: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    m: Vec<Dense<T>>,
    v: Vec<Dense<T>>,
    t: u64,
}

fn zeros_like<T: Scalar>(layers: &[Dense<T>]) -> Vec<Dense<T>> {
    layers
        .iter()
        .map(|l| Dense {
            w: ndarray::Array2::zeros(l.w.dim()),
            b: ndarray::Array1::zeros(l.b.dim()),
        })
        .collect()
}

pub fn grad_norm<T: Scalar>(grads: &[Dense<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.w.iter().chain(g.b.iter()))
        .map(|v| v.as_f64().powi(2))
        .sum::<f64>()
        .sqrt()
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, model: &ToyDenoiser<T>) -> Self {
        Self {
            config,
            lr_scale: 1.0,
            clip_norm: None,
            m: zeros_like(&model.layers),
            v: zeros_like(&model.layers),
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut ToyDenoiser<T>, grads: &[Dense<T>]) {
        self.t += 1;
        let mut scale = 1.0;
        if let Some(max) = self.clip_norm {
            let n = grad_norm(grads);
            if n > max {
                scale = max / n;
            }
        }
        let scale: T = lit(scale);
        match self.config {
            OptimizerConfig::Sgd { lr, momentum } => {
                let lr: T = lit(lr * self.lr_scale);
                let mu: T = lit(momentum);
                for ((p, g), m) in model.layers.iter_mut().zip(grads).zip(&mut self.m) {
                    Zip::from(&mut p.w).and(&g.w).and(&mut m.w).for_each(|p, &g, m| {
                        *m = mu * *m + g * scale;
                        *p -= lr * *m;
                    });
                    Zip::from(&mut p.b).and(&g.b).and(&mut m.b).for_each(|p, &g, m| {
                        *m = mu * *m + g * scale;
                        *p -= lr * *m;
                    });
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                let t = self.t as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let step: T = lit(lr * self.lr_scale * c2.sqrt() / c1);
                let decay: T = lit(lr * self.lr_scale * weight_decay);
                let (b1, b2, eps): (T, T, T) = (lit(beta1), lit(beta2), lit(eps * c2.sqrt()));
                let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
                    let g = g * scale;
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    *p -= decay * *p + step * *m / (v.sqrt() + eps);
                };
                for (((p, g), m), v) in model.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    Zip::from(&mut p.w)
                        .and(&g.w)
                        .and(&mut m.w)
                        .and(&mut v.w)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                    Zip::from(&mut p.b)
                        .and(&g.b)
                        .and(&mut m.b)
                        .and(&mut v.b)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                }
            }
        }
    }
}
