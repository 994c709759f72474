use serde::{Deserialize, Serialize};

use crate::encoder::SlotGrid;
use crate::error::{Error, Result};
use crate::nn::model::forward_grid;
use crate::nn::{Graph, ModelParams};

/// Post-softmax self-attention of one layer over the full grid width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub layer: usize,
    pub m: usize,
    /// `heads[h][i * m + j]`: weight of query `i` on key `j`.
    pub heads: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub mask: Vec<bool>,
}

impl AttentionMap {
    pub fn weight(&self, head: usize, query: usize, key: usize) -> f64 {
        self.heads[head][query * self.m + key]
    }
}

pub fn attention_map(params: &ModelParams, grid: &SlotGrid, layer: usize) -> Result<AttentionMap> {
    let layers = params.config.n_layers;
    if layer >= layers {
        return Err(Error::BadLayerIndex { index: layer, layers });
    }
    let mut g = Graph::new(&params.tensors);
    let enc = forward_grid(&mut g, params, grid, true, None)?;
    let probs = g.attention_probs(enc.attention[layer]).expect("attention node");
    let m = grid.m;
    let heads: Vec<Vec<f64>> = probs.chunks(m * m).map(<[f64]>::to_vec).collect();
    let mut mean = vec![0.0; m * m];
    for h in &heads {
        for (a, b) in mean.iter_mut().zip(h) {
            *a += b / heads.len() as f64;
        }
    }
    Ok(AttentionMap {
        layer,
        m,
        heads,
        mean,
        mask: grid.attention_mask.clone(),
    })
}
