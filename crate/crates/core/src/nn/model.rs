use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::encoder::{Channel, SlotGrid};
use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;
const PARAMS_PER_LAYER: usize = 16;
const EMBEDDINGS: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Feed-forward width.
    pub ff: usize,
    pub dropout: f64,
    /// Table sizes in channel order: diagnosis, age, segment, position, gender, bmi, smoking, procedure, lab.
    pub vocab_sizes: [usize; 9],
    pub m: usize,
    pub n_proc: usize,
    pub n_lab: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::ShapeMismatch(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.ff == 0 || self.m == 0 || self.vocab_sizes.iter().any(|&v| v == 0) {
            return Err(Error::ShapeMismatch("zero-sized dimension in model config".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::DomainError(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn diagnosis_vocab(&self) -> usize {
        self.vocab_sizes[0]
    }
}

/// Index of a tensor within a layer block.
#[derive(Debug, Clone, Copy)]
#[repr(usize)]
enum L {
    Ln1G,
    Ln1B,
    Wq,
    Bq,
    Wk,
    Bk,
    Wv,
    Bv,
    Wo,
    Bo,
    Ln2G,
    Ln2B,
    W1,
    B1,
    W2,
    B2,
}

/// Role of a parameter tensor, used by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Embedding table whose row 0 (PAD) is frozen at zero.
    Embedding,
    Weight,
    Bias,
    LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor>,
}

fn truncated_normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 {
                break v * INIT_STD;
            }
        })
        .collect()
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let mut tensors = Vec::new();
        for &v in &config.vocab_sizes {
            let mut t = Tensor::new(vec![v, d], truncated_normal(&mut rng, v * d))?;
            t.row_mut(0).fill(0.0);
            tensors.push(t);
        }
        for _ in 0..config.n_layers {
            for kind in 0..PARAMS_PER_LAYER {
                let (rows, cols) = layer_shape(kind, d, config.ff);
                tensors.push(match layer_kind(kind) {
                    ParamKind::Weight => Tensor::new(vec![rows, cols], truncated_normal(&mut rng, rows * cols))?,
                    ParamKind::LayerNorm if kind == L::Ln1G as usize || kind == L::Ln2G as usize => {
                        Tensor::new(vec![1, cols], vec![1.0; cols])?
                    }
                    _ => Tensor::zeros(&[1, cols]),
                });
            }
        }
        tensors.push(Tensor::new(vec![1, d], vec![1.0; d])?);
        tensors.push(Tensor::zeros(&[1, d]));
        let heads = [config.diagnosis_vocab(), 1, 1];
        for out in heads {
            tensors.push(Tensor::new(vec![d, out], truncated_normal(&mut rng, d * out))?);
            tensors.push(Tensor::zeros(&[1, out]));
        }
        Ok(Self { config: config.clone(), tensors })
    }

    pub fn kinds(&self) -> Vec<ParamKind> {
        let mut kinds = vec![ParamKind::Embedding; EMBEDDINGS];
        for _ in 0..self.config.n_layers {
            kinds.extend((0..PARAMS_PER_LAYER).map(layer_kind));
        }
        kinds.extend([ParamKind::LayerNorm, ParamKind::LayerNorm]);
        for _ in 0..3 {
            kinds.extend([ParamKind::Weight, ParamKind::Bias]);
        }
        kinds
    }

    pub fn embedding_index(channel: Channel) -> usize {
        channel.index()
    }

    fn layer_base(&self, layer: usize) -> usize {
        EMBEDDINGS + layer * PARAMS_PER_LAYER
    }

    fn final_ln(&self) -> usize {
        self.layer_base(self.config.n_layers)
    }

    pub fn mlm_head(&self) -> (usize, usize) {
        let b = self.final_ln() + 2;
        (b, b + 1)
    }

    pub fn cls_head(&self) -> (usize, usize) {
        let b = self.final_ln() + 4;
        (b, b + 1)
    }

    pub fn plos_head(&self) -> (usize, usize) {
        let b = self.final_ln() + 6;
        (b, b + 1)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

fn layer_kind(kind: usize) -> ParamKind {
    match kind {
        k if k == L::Ln1G as usize || k == L::Ln1B as usize || k == L::Ln2G as usize || k == L::Ln2B as usize => {
            ParamKind::LayerNorm
        }
        k if k == L::Wq as usize || k == L::Wk as usize || k == L::Wv as usize || k == L::Wo as usize => ParamKind::Weight,
        k if k == L::W1 as usize || k == L::W2 as usize => ParamKind::Weight,
        _ => ParamKind::Bias,
    }
}

fn layer_shape(kind: usize, d: usize, ff: usize) -> (usize, usize) {
    match kind {
        k if k == L::W1 as usize => (d, ff),
        k if k == L::B1 as usize => (1, ff),
        k if k == L::W2 as usize => (ff, d),
        k if layer_kind(k) == ParamKind::Weight => (d, d),
        _ => (1, d),
    }
}

/// Vars produced by one encoder pass.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// Summed embeddings fed to the first layer.
    pub input: Var,
    pub hidden: Var,
    /// One attention node per layer.
    pub attention: Vec<Var>,
    pub width: usize,
}

/// Dropout keep-masks drawn during training; `None` runs deterministically.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

fn apply_dropout(g: &mut Graph<'_>, x: Var, dropout: &mut Option<Dropout<'_>>) -> Result<Var> {
    let Some(dr) = dropout.as_mut() else { return Ok(x) };
    if dr.rate <= 0.0 {
        return Ok(x);
    }
    let shape = g.value(x).shape().to_vec();
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - dr.rate);
    let mask: Vec<f64> = (0..n)
        .map(|_| if dr.rng.random::<f64>() < dr.rate { 0.0 } else { keep })
        .collect();
    let m = g.constant(Tensor::new(shape, mask)?);
    g.mul(x, m)
}

/// Embedding rows of the first `width` columns of a grid.
pub fn grid_rows(grid: &SlotGrid, config: &ModelConfig, width: usize) -> Result<Vec<(usize, Vec<u32>)>> {
    if grid.m != config.m || grid.n_proc() != config.n_proc || grid.n_lab() != config.n_lab {
        return Err(Error::ShapeMismatch(format!(
            "grid m={} n_proc={} n_lab={} but model expects m={} n_proc={} n_lab={}",
            grid.m,
            grid.n_proc(),
            grid.n_lab(),
            config.m,
            config.n_proc,
            config.n_lab
        )));
    }
    Ok(grid
        .rows()
        .into_iter()
        .map(|r| (ModelParams::embedding_index(r.channel), r.tokens[..width].to_vec()))
        .collect())
}

/// Sums channel embeddings over the first `width` columns.
pub fn embed_and_sum(g: &mut Graph<'_>, grid: &SlotGrid, config: &ModelConfig, width: usize) -> Result<Var> {
    g.embed_sum(grid_rows(grid, config, width)?)
}

/// Runs the transformer stack on summed embeddings `x` (`n × d`).
pub fn encoder_forward(
    g: &mut Graph<'_>,
    params: &ModelParams,
    x: Var,
    mask: &[bool],
    mut dropout: Option<Dropout<'_>>,
) -> Result<Encoded> {
    let cfg = &params.config;
    let width = g.value(x).rows();
    if mask.len() != width || g.value(x).cols() != cfg.d_model {
        return Err(Error::ShapeMismatch(format!(
            "encoder input {:?} with mask of {}",
            g.value(x).shape(),
            mask.len()
        )));
    }
    let mut h = apply_dropout(g, x, &mut dropout)?;
    let mut attention = Vec::with_capacity(cfg.n_layers);
    for layer in 0..cfg.n_layers {
        let b = params.layer_base(layer);
        let p = |k: L| b + k as usize;
        let (g1, b1) = (g.param(p(L::Ln1G)), g.param(p(L::Ln1B)));
        let z = g.layer_norm(h, g1, b1)?;
        let proj = |g: &mut Graph<'_>, w: L, bias: L| -> Result<Var> {
            let wv = g.param(p(w));
            let bv = g.param(p(bias));
            let y = g.matmul(z, wv)?;
            g.add_row(y, bv)
        };
        let q = proj(g, L::Wq, L::Bq)?;
        let k = proj(g, L::Wk, L::Bk)?;
        let v = proj(g, L::Wv, L::Bv)?;
        let a = g.attention(q, k, v, cfg.n_heads, mask)?;
        attention.push(a);
        let (wo, bo) = (g.param(p(L::Wo)), g.param(p(L::Bo)));
        let o = g.matmul(a, wo)?;
        let o = g.add_row(o, bo)?;
        let o = apply_dropout(g, o, &mut dropout)?;
        h = g.add(h, o)?;

        let (g2, b2) = (g.param(p(L::Ln2G)), g.param(p(L::Ln2B)));
        let z = g.layer_norm(h, g2, b2)?;
        let (w1, bb1, w2, bb2) = (g.param(p(L::W1)), g.param(p(L::B1)), g.param(p(L::W2)), g.param(p(L::B2)));
        let f = g.matmul(z, w1)?;
        let f = g.add_row(f, bb1)?;
        let f = g.gelu(f);
        let f = g.matmul(f, w2)?;
        let f = g.add_row(f, bb2)?;
        let f = apply_dropout(g, f, &mut dropout)?;
        h = g.add(h, f)?;
    }
    let f = params.final_ln();
    let (fg, fb) = (g.param(f), g.param(f + 1));
    let hidden = g.layer_norm(h, fg, fb)?;
    Ok(Encoded {
        input: x,
        hidden,
        attention,
        width,
    })
}

/// Embeds and encodes a grid. With `full_width` false only the unmasked prefix is processed,
/// which leaves every unmasked output unchanged.
pub fn forward_grid(
    g: &mut Graph<'_>,
    params: &ModelParams,
    grid: &SlotGrid,
    full_width: bool,
    dropout: Option<Dropout<'_>>,
) -> Result<Encoded> {
    let width = if full_width { grid.m } else { grid.active_len().max(1) };
    let x = embed_and_sum(g, grid, &params.config, width)?;
    encoder_forward(g, params, x, &grid.attention_mask[..width], dropout)
}

fn head(g: &mut Graph<'_>, hidden: Var, cols: Vec<usize>, (w, b): (usize, usize)) -> Result<Var> {
    let rows = g.rows(hidden, cols)?;
    let (wv, bv) = (g.param(w), g.param(b));
    let y = g.matmul(rows, wv)?;
    g.add_row(y, bv)
}

/// MLM logits (`cols.len() × diagnosis vocab`) at the given columns.
pub fn mlm_logits(g: &mut Graph<'_>, params: &ModelParams, hidden: Var, cols: Vec<usize>) -> Result<Var> {
    head(g, hidden, cols, params.mlm_head())
}

/// Classifier logit (`1 × 1`) read from column 0.
pub fn cls_logit(g: &mut Graph<'_>, params: &ModelParams, hidden: Var) -> Result<Var> {
    head(g, hidden, vec![0], params.cls_head())
}

/// Prolonged-stay logit (`1 × 1`) read from column 0.
pub fn plos_logit(g: &mut Graph<'_>, params: &ModelParams, hidden: Var) -> Result<Var> {
    head(g, hidden, vec![0], params.plos_head())
}

/// Pre-sigmoid classifier output for one grid.
pub fn predict_logit(params: &ModelParams, grid: &SlotGrid) -> Result<f64> {
    let mut g = Graph::new(&params.tensors);
    let enc = forward_grid(&mut g, params, grid, false, None)?;
    let z = cls_logit(&mut g, params, enc.hidden)?;
    Ok(g.value(z).item())
}

/// Hidden state at column 0.
pub fn cls_embedding(params: &ModelParams, grid: &SlotGrid) -> Result<Vec<f64>> {
    let mut g = Graph::new(&params.tensors);
    let enc = forward_grid(&mut g, params, grid, false, None)?;
    Ok(g.value(enc.hidden).row(0).to_vec())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::journey::vocab::PAD;

    pub(crate) fn tiny_config(d: usize, layers: usize) -> ModelConfig {
        ModelConfig {
            d_model: d,
            n_layers: layers,
            n_heads: 2,
            ff: 2 * d,
            dropout: 0.0,
            vocab_sizes: [12, 8, 7, 9, 8, 10, 9, 8, 8],
            m: 6,
            n_proc: 1,
            n_lab: 1,
        }
    }

    fn grid(cfg: &ModelConfig, diag: &[u32]) -> SlotGrid {
        let mut g = SlotGrid::empty(cfg.m, cfg.n_proc, cfg.n_lab);
        for (j, &t) in diag.iter().enumerate() {
            g.diag_row[j] = t;
            g.age_row[j] = 5 + j as u32 % 3;
            g.attention_mask[j] = true;
        }
        g
    }

    #[test]
    fn heads_divide_width() {
        let mut c = tiny_config(8, 1);
        c.n_heads = 3;
        assert!(matches!(c.validate(), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn pad_rows_start_at_zero() {
        let p = ModelParams::init(&tiny_config(8, 1), 1).unwrap();
        for t in &p.tensors[..EMBEDDINGS] {
            assert!(t.row(0).iter().all(|v| *v == 0.0));
        }
        assert_eq!(p.kinds().len(), p.tensors.len());
    }

    #[test]
    fn single_token_column_is_its_embedding() {
        let cfg = tiny_config(8, 1);
        let p = ModelParams::init(&cfg, 3).unwrap();
        let mut sg = SlotGrid::empty(cfg.m, 1, 1);
        sg.diag_row[0] = 7;
        let mut g = Graph::new(&p.tensors);
        let x = embed_and_sum(&mut g, &sg, &cfg, cfg.m).unwrap();
        assert_eq!(g.value(x).row(0), p.tensors[0].row(7));
        assert!(g.value(x).row(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn padded_tail_does_not_change_outputs() {
        let cfg = tiny_config(8, 2);
        let p = ModelParams::init(&cfg, 4).unwrap();
        let sg = grid(&cfg, &[2, 6, 7, 3]);
        let mut g1 = Graph::new(&p.tensors);
        let full = forward_grid(&mut g1, &p, &sg, true, None).unwrap();
        let mut g2 = Graph::new(&p.tensors);
        let trimmed = forward_grid(&mut g2, &p, &sg, false, None).unwrap();
        for j in 0..4 {
            for (a, b) in g1.value(full.hidden).row(j).iter().zip(g2.value(trimmed.hidden).row(j)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn permuting_pad_columns_is_neutral() {
        let cfg = tiny_config(8, 1);
        let p = ModelParams::init(&cfg, 5).unwrap();
        let mut a = grid(&cfg, &[2, 6, 3]);
        a.diag_row[4] = PAD;
        a.proc_rows[0][5] = 6;
        let mut b = a.clone();
        b.proc_rows[0].swap(4, 5);
        let run = |s: &SlotGrid| {
            let mut g = Graph::new(&p.tensors);
            let e = forward_grid(&mut g, &p, s, true, None).unwrap();
            g.value(e.hidden).data()[..3 * cfg.d_model].to_vec()
        };
        for (x, y) in run(&a).iter().zip(run(&b)) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_hidden_gives_head_bias() {
        let cfg = tiny_config(8, 1);
        let mut p = ModelParams::init(&cfg, 6).unwrap();
        let (_, b) = p.mlm_head();
        p.tensors[b].data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = i as f64);
        let mut g = Graph::new(&p.tensors);
        let h = g.constant(Tensor::zeros(&[cfg.m, cfg.d_model]));
        let l = mlm_logits(&mut g, &p, h, vec![0, 3]).unwrap();
        assert_eq!(g.value(l).shape(), &[2, cfg.diagnosis_vocab()]);
        assert_eq!(g.value(l).row(1), p.tensors[b].data());
    }

    #[test]
    fn cls_reads_column_zero_only() {
        let cfg = tiny_config(8, 1);
        let p = ModelParams::init(&cfg, 7).unwrap();
        let mut hidden = Tensor::new(vec![cfg.m, cfg.d_model], (0..48).map(|v| v as f64 * 0.01).collect()).unwrap();
        let run = |h: &Tensor| {
            let mut g = Graph::new(&p.tensors);
            let hv = g.constant(h.clone());
            let z = cls_logit(&mut g, &p, hv).unwrap();
            g.value(z).item()
        };
        let before = run(&hidden);
        hidden.row_mut(3).fill(9.0);
        assert_eq!(before, run(&hidden));
    }

    #[test]
    fn absent_token_gets_zero_gradient() {
        let cfg = tiny_config(8, 1);
        let p = ModelParams::init(&cfg, 8).unwrap();
        let sg = grid(&cfg, &[2, 6, 7, 3]);
        let mut g = Graph::new(&p.tensors);
        let e = forward_grid(&mut g, &p, &sg, false, None).unwrap();
        let z = cls_logit(&mut g, &p, e.hidden).unwrap();
        let s = g.sum(z);
        let grads = g.backward(s).unwrap();
        assert!(grads.params[0].row(9).iter().all(|v| *v == 0.0));
        assert!(grads.params[0].row(PAD as usize).iter().all(|v| *v == 0.0));
        assert!(grads.params[0].row(6).iter().any(|v| *v != 0.0));
    }
}
