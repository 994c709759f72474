use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, ModelParams, ParamKind, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warmup {
    /// Constant learning rate, no weight decay.
    None,
    /// Linear ramp over `proportion` of the steps, then linear decay to zero, with decoupled weight decay.
    Linear { proportion: f64, weight_decay: f64 },
}

impl Warmup {
    pub const DEFAULT: Warmup = Warmup::Linear {
        proportion: 0.1,
        weight_decay: 0.01,
    };

    pub fn weight_decay(&self) -> f64 {
        match *self {
            Warmup::None => 0.0,
            Warmup::Linear { weight_decay, .. } => weight_decay,
        }
    }

    pub fn is_active(&self) -> bool {
        matches!(self, Warmup::Linear { .. })
    }
}

/// Learning rate at 1-based `step` out of `total`.
pub fn learning_rate(peak: f64, warmup: Warmup, step: usize, total: usize) -> f64 {
    match warmup {
        Warmup::None => peak,
        Warmup::Linear { proportion, .. } => {
            let x = step as f64 / total.max(1) as f64;
            if x < proportion {
                peak * x / proportion
            } else if proportion >= 1.0 {
                peak
            } else {
                peak * ((1.0 - x) / (1.0 - proportion)).max(0.0)
            }
        }
    }
}

/// Adam without bias correction, decoupled weight decay on weight matrices and embeddings.
#[derive(Debug, Clone)]
pub struct BertAdam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    kinds: Vec<ParamKind>,
    pub step: usize,
}

impl BertAdam {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.tensors.iter().map(Tensor::zeros_like).collect(),
            v: params.tensors.iter().map(Tensor::zeros_like).collect(),
            kinds: params.kinds(),
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64, weight_decay: f64) -> Result<()> {
        if grads.params.len() != params.tensors.len()
            || grads.params.iter().zip(&params.tensors).any(|(g, p)| g.shape() != p.shape())
        {
            return Err(Error::ShapeMismatch("gradient shapes differ from parameters".into()));
        }
        self.step += 1;
        for (i, p) in params.tensors.iter_mut().enumerate() {
            let kind = self.kinds[i];
            let wd = match kind {
                ParamKind::Weight | ParamKind::Embedding => weight_decay,
                ParamKind::Bias | ParamKind::LayerNorm => 0.0,
            };
            let cols = p.cols();
            let skip = if kind == ParamKind::Embedding { cols } else { 0 };
            let g = grads.params[i].data();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let p = p.data_mut();
            for j in skip..p.len() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let upd = m[j] / (v[j].sqrt() + EPS) + wd * p[j];
                p[j] -= lr * upd;
            }
        }
        Ok(())
    }
}
