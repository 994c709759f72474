use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{Channel, SlotGrid};
use crate::error::{Error, Result};
use crate::journey::vocab::PAD;
use crate::nn::model::{cls_logit, encoder_forward, grid_rows};
use crate::nn::{Graph, ModelParams, Tensor};

/// A differentiable scalar function of the summed input embedding (`width × d`).
pub trait ScalarModel: Sync {
    fn value_and_grad(&self, x: &Tensor, mask: &[bool]) -> Result<(f64, Tensor)>;
}

/// The fine-tuned classifier; the output is the pre-sigmoid logit.
pub struct Classifier<'a>(pub &'a ModelParams);

impl ScalarModel for Classifier<'_> {
    fn value_and_grad(&self, x: &Tensor, mask: &[bool]) -> Result<(f64, Tensor)> {
        let params = self.0;
        let mut g = Graph::new(&params.tensors);
        let xv = g.input_with_grad(x.clone());
        let enc = encoder_forward(&mut g, params, xv, mask, None)?;
        let z = cls_logit(&mut g, params, enc.hidden)?;
        let value = g.value(z).item();
        let grads = g.backward(z)?;
        let gx = grads.input(xv).cloned().unwrap_or_else(|| x.zeros_like());
        Ok((value, gx))
    }
}

/// `f(x) = <w, x>` over the first `width` columns of `w`.
pub struct LinearSurrogate {
    pub w: Tensor,
}

impl ScalarModel for LinearSurrogate {
    fn value_and_grad(&self, x: &Tensor, _mask: &[bool]) -> Result<(f64, Tensor)> {
        let n = x.len();
        if n > self.w.len() || x.cols() != self.w.cols() {
            return Err(Error::ShapeMismatch("surrogate weights narrower than input".into()));
        }
        let w = &self.w.data()[..n];
        let v = w.iter().zip(x.data()).map(|(a, b)| a * b).sum();
        Ok((v, Tensor::new(x.shape().to_vec(), w.to_vec())?))
    }
}

/// Per-row embeddings of a grid over its first `width` columns: `(channel, row, tokens, width × d values)`.
fn row_embeddings(params: &ModelParams, grid: &SlotGrid, width: usize) -> Result<Vec<(Channel, usize, Vec<u32>, Vec<f64>)>> {
    let d = params.config.d_model;
    grid_rows(grid, &params.config, width)?;
    let mut out = Vec::with_capacity(grid.row_count());
    for r in grid.rows() {
        let table = &params.tensors[r.channel.index()];
        let mut e = vec![0.0; width * d];
        for (j, &tok) in r.tokens[..width].iter().enumerate() {
            if tok != PAD {
                let tok = tok as usize;
                if tok >= table.rows() {
                    return Err(Error::ShapeMismatch(format!("token {tok} outside {} table", r.channel.name())));
                }
                e[j * d..(j + 1) * d].copy_from_slice(table.row(tok));
            }
        }
        out.push((r.channel, r.row, r.tokens[..width].to_vec(), e));
    }
    Ok(out)
}

/// Signed per-cell attributions before absolute summation.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedAttribution {
    pub width: usize,
    pub d_model: usize,
    /// `(channel, row, tokens, width × d attributions)` in grid row order.
    pub rows: Vec<(Channel, usize, Vec<u32>, Vec<f64>)>,
    /// Background index drawn for each sample.
    pub baselines: Vec<usize>,
    pub alphas: Vec<f64>,
}

impl SignedAttribution {
    pub fn total(&self) -> f64 {
        self.rows.iter().flat_map(|r| r.3.iter()).sum()
    }
}

/// Expected gradients of `model` in embedding space, under the explained grid's mask.
pub fn expected_gradients_signed(
    model: &impl ScalarModel,
    params: &ModelParams,
    grid: &SlotGrid,
    background: &[SlotGrid],
    k: usize,
    seed: u64,
) -> Result<SignedAttribution> {
    if background.is_empty() {
        return Err(Error::EmptyBackground);
    }
    if k == 0 {
        return Err(Error::DomainError("sample count k must be at least 1".into()));
    }
    let d = params.config.d_model;
    let width = grid.active_len().max(1);
    let mask = &grid.attention_mask[..width];
    let ex = row_embeddings(params, grid, width)?;
    let eb: Vec<_> = background
        .iter()
        .map(|b| row_embeddings(params, b, width))
        .collect::<Result<_>>()?;
    let sum_rows = |rows: &[(Channel, usize, Vec<u32>, Vec<f64>)]| {
        let mut s = vec![0.0; width * d];
        for r in rows {
            for (a, b) in s.iter_mut().zip(&r.3) {
                *a += b;
            }
        }
        s
    };
    let sx = sum_rows(&ex);
    let sb: Vec<Vec<f64>> = eb.iter().map(|r| sum_rows(r)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(usize, f64)> = (0..k)
        .map(|_| (rng.random_range(0..background.len()), rng.random::<f64>()))
        .collect();

    let grads: Vec<Vec<f64>> = draws
        .par_iter()
        .map(|&(b, alpha)| {
            let x: Vec<f64> = sb[b].iter().zip(&sx).map(|(b, x)| b + alpha * (x - b)).collect();
            let (_, g) = model.value_and_grad(&Tensor::new(vec![width, d], x)?, mask)?;
            Ok(g.into_data())
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<_> = ex
        .iter()
        .map(|(c, r, t, _)| (*c, *r, t.clone(), vec![0.0; width * d]))
        .collect();
    let inv_k = 1.0 / k as f64;
    for (&(b, _), g) in draws.iter().zip(&grads) {
        for (ri, acc) in rows.iter_mut().enumerate() {
            let (xe, be) = (&ex[ri].3, &eb[b][ri].3);
            for i in 0..width * d {
                acc.3[i] += (xe[i] - be[i]) * g[i] * inv_k;
            }
        }
    }
    Ok(SignedAttribution {
        width,
        d_model: d,
        rows,
        baselines: draws.iter().map(|x| x.0).collect(),
        alphas: draws.iter().map(|x| x.1).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAttribution {
    pub channel: Channel,
    pub row: usize,
    pub column: usize,
    pub token: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotAttribution {
    pub channel: Channel,
    pub column: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub patient_id: String,
    pub checkpoint: String,
    pub k: usize,
    pub seed: u64,
    pub width: usize,
    /// Absolute-sum attribution of every cell in the active columns.
    pub tokens: Vec<TokenAttribution>,
    /// One total per channel.
    pub features: BTreeMap<Channel, f64>,
    /// Per channel per column totals.
    pub slots: Vec<SlotAttribution>,
    /// Sum of signed attributions, comparable to `f(x) - mean f(baseline)`.
    pub signed_total: f64,
}

impl AttributionReport {
    pub fn from_signed(signed: &SignedAttribution, patient_id: &str, checkpoint: &str, k: usize, seed: u64) -> Self {
        let d = signed.d_model;
        let mut tokens = Vec::new();
        let mut features: BTreeMap<Channel, f64> = Channel::ALL.iter().map(|c| (*c, 0.0)).collect();
        let mut slot_map: BTreeMap<(Channel, usize), f64> = BTreeMap::new();
        for (channel, row, toks, vals) in &signed.rows {
            for (column, &token) in toks.iter().enumerate() {
                let value: f64 = vals[column * d..(column + 1) * d].iter().map(|v| v.abs()).sum();
                *features.get_mut(channel).expect("all channels") += value;
                *slot_map.entry((*channel, column)).or_default() += value;
                tokens.push(TokenAttribution {
                    channel: *channel,
                    row: *row,
                    column,
                    token,
                    value,
                });
            }
        }
        let slots = slot_map
            .into_iter()
            .map(|((channel, column), value)| SlotAttribution { channel, column, value })
            .collect();
        Self {
            patient_id: patient_id.into(),
            checkpoint: checkpoint.into(),
            k,
            seed,
            width: signed.width,
            tokens,
            features,
            slots,
            signed_total: signed.total(),
        }
    }

    pub fn slot_value(&self, channel: Channel, column: usize) -> f64 {
        self.slots
            .iter()
            .find(|s| s.channel == channel && s.column == column)
            .map_or(0.0, |s| s.value)
    }
}

/// Attribution report of the classifier logit for one patient.
pub fn expected_gradients(
    params: &ModelParams,
    grid: &SlotGrid,
    background: &[SlotGrid],
    k: usize,
    seed: u64,
    patient_id: &str,
    checkpoint: &str,
) -> Result<AttributionReport> {
    let signed = expected_gradients_signed(&Classifier(params), params, grid, background, k, seed)?;
    Ok(AttributionReport::from_signed(&signed, patient_id, checkpoint, k, seed))
}
