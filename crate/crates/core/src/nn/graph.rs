//! Tape-based reverse-mode differentiation over coarse fused operations.

use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::error::{Error, Result};
use crate::journey::vocab::PAD;

pub const LAYER_NORM_EPS: f64 = 1e-12;
const MASKED_LOGIT: f64 = -1e9;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Focal-loss settings for a binary head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Focal {
    pub gamma: f64,
    /// Weight of the positive class; negatives get `1 - alpha`. `None` disables class weighting.
    pub alpha: Option<f64>,
}

impl Focal {
    pub const CROSS_ENTROPY: Focal = Focal { gamma: 0.0, alpha: None };
}

#[derive(Debug)]
enum Op {
    Param(usize),
    Input { grad: bool },
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f64> },
    Rows { src: Var, idx: Vec<usize> },
    EmbedSum { rows: Vec<(usize, Vec<u32>)> },
    SoftmaxXent { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    BinaryFocal { z: Var, labels: Vec<bool>, focal: Focal },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Dense gradient per parameter tensor, in parameter order.
    pub params: Vec<Tensor>,
    inputs: Vec<(Var, Tensor)>,
}

impl Gradients {
    pub fn zeros_for(params: &[Tensor]) -> Self {
        Self {
            params: params.iter().map(Tensor::zeros_like).collect(),
            inputs: Vec::new(),
        }
    }

    /// Gradient with respect to an input registered with `input_with_grad`.
    pub fn input(&self, v: Var) -> Option<&Tensor> {
        self.inputs.iter().find(|(u, _)| *u == v).map(|(_, t)| t)
    }

    /// Adds another set of parameter gradients into this one.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.add_assign(b);
        }
    }
}

/// One recorded computation. Parameters are borrowed, never copied.
pub struct Graph<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
    consumed: bool,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(msg()))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Returns `(loss, dloss/dz)` for one binary example with logit `z`.
pub fn focal_term(z: f64, label: bool, focal: Focal) -> (f64, f64) {
    let s = if label { z } else { -z };
    let ln_p = -softplus(-s);
    let p = sigmoid(s);
    let q = sigmoid(-s);
    let w = match focal.alpha {
        Some(a) if label => a,
        Some(a) => 1.0 - a,
        None => 1.0,
    };
    let qg = if focal.gamma == 0.0 { 1.0 } else { q.powf(focal.gamma) };
    let loss = -w * qg * ln_p;
    let ds = w * qg * (focal.gamma * p * ln_p - q);
    (loss, if label { ds } else { -ds })
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            consumed: false,
        }
    }

    fn push(&mut self, op: Op, value: Option<Tensor>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(i) => &self.params[i],
            _ => node.value.as_ref().expect("non-param node carries a value"),
        }
    }

    /// Attention probabilities `[heads × n × n]` recorded by an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn param(&mut self, index: usize) -> Var {
        self.push(Op::Param(index), None)
    }

    /// Constant leaf; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Input { grad: false }, Some(t))
    }

    /// Leaf whose gradient is reported by `backward`.
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(Op::Input { grad: true }, Some(t))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k, p) = (ta.rows(), ta.cols(), tb.cols());
        check(tb.rows() == k, || format!("matmul {:?} × {:?}", ta.shape(), tb.shape()))?;
        let mut out = vec![0.0; n * p];
        matmul_acc(ta.data(), tb.data(), &mut out, n, k, p);
        Ok(self.push(Op::MatMul(a, b), Some(Tensor::new(vec![n, p], out)?)))
    }

    /// Adds a `1 × p` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let p = ta.cols();
        check(tr.len() == p, || format!("row broadcast {:?} + {:?}", ta.shape(), tr.shape()))?;
        let mut out = ta.clone();
        for r in out.data_mut().chunks_mut(p) {
            for (x, b) in r.iter_mut().zip(tr.data()) {
                *x += b;
            }
        }
        Ok(self.push(Op::AddRow(a, row), Some(out)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check(ta.shape() == tb.shape(), || format!("add {:?} + {:?}", ta.shape(), tb.shape()))?;
        let mut out = ta.clone();
        out.add_assign(tb);
        Ok(self.push(Op::Add(a, b), Some(out)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check(ta.shape() == tb.shape(), || format!("mul {:?} * {:?}", ta.shape(), tb.shape()))?;
        let mut out = ta.clone();
        for (x, y) in out.data_mut().iter_mut().zip(tb.data()) {
            *x *= y;
        }
        Ok(self.push(Op::Mul(a, b), Some(out)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale(s);
        self.push(Op::Scale(a, s), Some(out))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for x in out.data_mut() {
            let v = *x;
            *x = 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh());
        }
        self.push(Op::Gelu(a), Some(out))
    }

    /// Row-wise layer normalization with learned gain and bias (`1 × d` each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        let (tg, tb) = (self.value(gain), self.value(bias));
        check(tg.len() == d && tb.len() == d, || "layer norm parameter width".into())?;
        let n = tx.rows();
        let mut xhat = vec![0.0; n * d];
        let mut rstd = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let r = tx.row(i);
            let mean = r.iter().sum::<f64>() / d as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = s;
            for j in 0..d {
                let h = (r[j] - mean) * s;
                xhat[i * d + j] = h;
                out[i * d + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::new(vec![n, d], out)?;
        Ok(self.push(Op::LayerNorm { x, gain, bias, xhat, rstd }, Some(out)))
    }

    /// Multi-head scaled dot-product attention. `key_mask[j] == false` hides key `j`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, key_mask: &[bool]) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = (tq.rows(), tq.cols());
        check(tk.shape() == tq.shape() && tv.shape() == tq.shape(), || "attention q/k/v shapes".into())?;
        check(key_mask.len() == n, || format!("mask length {} for {n} columns", key_mask.len()))?;
        check(heads > 0 && d % heads == 0, || format!("{d} not divisible by {heads} heads"))?;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * n * n];
        let mut out = vec![0.0; n * d];
        for h in 0..heads {
            let off = h * dh;
            let ph = &mut probs[h * n * n..(h + 1) * n * n];
            for i in 0..n {
                let qi = &tq.row(i)[off..off + dh];
                let row = &mut ph[i * n..(i + 1) * n];
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    let kj = &tk.row(j)[off..off + dh];
                    let mut s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    if !key_mask[j] {
                        s += MASKED_LOGIT;
                    }
                    row[j] = s;
                    max = max.max(s);
                }
                let mut z = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                for s in row.iter_mut() {
                    *s /= z;
                }
                let oi = &mut out[i * d + off..i * d + off + dh];
                for (j, &pij) in row.iter().enumerate() {
                    if pij == 0.0 {
                        continue;
                    }
                    for (o, vv) in oi.iter_mut().zip(&tv.row(j)[off..off + dh]) {
                        *o += pij * vv;
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, d], out)?;
        Ok(self.push(Op::Attention { q, k, v, heads, probs }, Some(out)))
    }

    /// Gathers rows of `src` by index.
    pub fn rows(&mut self, src: Var, idx: Vec<usize>) -> Result<Var> {
        let t = self.value(src);
        check(idx.iter().all(|&i| i < t.rows()), || "row index out of range".into())?;
        let c = t.cols();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            out.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![idx.len(), c], out)?;
        Ok(self.push(Op::Rows { src, idx }, Some(out)))
    }

    /// Sums embedding lookups column-wise: `out[j] = Σ_r table_r[tokens_r[j]]`, skipping PAD.
    pub fn embed_sum(&mut self, rows: Vec<(usize, Vec<u32>)>) -> Result<Var> {
        let width = rows.first().map_or(0, |(_, t)| t.len());
        let d = rows.first().map_or(0, |(p, _)| self.params[*p].cols());
        let mut out = vec![0.0; width * d];
        for (p, tokens) in &rows {
            let table = &self.params[*p];
            check(tokens.len() == width && table.cols() == d, || "embedding row widths differ".into())?;
            for (j, &tok) in tokens.iter().enumerate() {
                if tok == PAD {
                    continue;
                }
                check((tok as usize) < table.rows(), || format!("token {tok} outside table of {}", table.rows()))?;
                for (o, e) in out[j * d..(j + 1) * d].iter_mut().zip(table.row(tok as usize)) {
                    *o += e;
                }
            }
        }
        let out = Tensor::new(vec![width, d], out)?;
        Ok(self.push(Op::EmbedSum { rows }, Some(out)))
    }

    /// Summed softmax cross-entropy; row `i` of `logits` has target class `targets[i]`.
    pub fn softmax_xent(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var> {
        let t = self.value(logits);
        let (n, c) = (t.rows(), t.cols());
        check(targets.len() == n, || "one target per logit row".into())?;
        check(targets.iter().all(|&y| y < c), || "target class out of range".into())?;
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            let r = t.row(i);
            let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = r.iter().map(|v| (v - max).exp()).sum();
            let lse = max + z.ln();
            loss += lse - r[targets[i]];
            for j in 0..c {
                probs[i * c + j] = (r[j] - lse).exp();
            }
        }
        Ok(self.push(Op::SoftmaxXent { logits, targets, probs }, Some(Tensor::scalar(loss))))
    }

    /// Summed focal loss over an `n × 1` column of logits.
    pub fn binary_focal(&mut self, z: Var, labels: Vec<bool>, focal: Focal) -> Result<Var> {
        let t = self.value(z);
        check(t.len() == labels.len(), || "one label per logit".into())?;
        let loss: f64 = t.data().iter().zip(&labels).map(|(&z, &y)| focal_term(z, y, focal).0).sum();
        Ok(self.push(Op::BinaryFocal { z, labels, focal }, Some(Tensor::scalar(loss))))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Some(Tensor::scalar(s)))
    }

    /// Back-propagates from a scalar node. The tape can be differentiated only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        self.consumed = true;
        check(self.value(loss).len() == 1, || "backward needs a scalar".into())?;

        let mut grads = Gradients::zeros_for(self.params);
        let mut g: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(dy) = g[idx].take() else { continue };
            let nodes = &self.nodes;
            let params = self.params;
            let val = |v: Var| -> &Tensor {
                match nodes[v.0].op {
                    Op::Param(i) => &params[i],
                    _ => nodes[v.0].value.as_ref().unwrap(),
                }
            };
            let mut send = |v: Var, f: &dyn Fn(&mut [f64])| {
                let slot = g[v.0].get_or_insert_with(|| val(v).zeros_like());
                f(slot.data_mut());
            };
            match &nodes[idx].op {
                Op::Param(i) => grads.params[*i].add_assign(&dy),
                Op::Input { grad } => {
                    if *grad {
                        grads.inputs.push((Var(idx), dy));
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (n, k, p) = (ta.rows(), ta.cols(), tb.cols());
                    send(*a, &|da| matmul_nt_acc(dy.data(), tb.data(), da, n, p, k));
                    send(*b, &|db| matmul_tn_acc(ta.data(), dy.data(), db, n, k, p));
                }
                Op::AddRow(a, row) => {
                    let p = dy.cols();
                    send(*a, &|da| add_into(da, dy.data()));
                    send(*row, &|dr| {
                        for r in dy.data().chunks(p) {
                            add_into(dr, r);
                        }
                    });
                }
                Op::Add(a, b) => {
                    send(*a, &|da| add_into(da, dy.data()));
                    send(*b, &|db| add_into(db, dy.data()));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    send(*a, &|da| {
                        for ((d, y), w) in da.iter_mut().zip(dy.data()).zip(tb.data()) {
                            *d += y * w;
                        }
                    });
                    send(*b, &|db| {
                        for ((d, y), w) in db.iter_mut().zip(dy.data()).zip(ta.data()) {
                            *d += y * w;
                        }
                    });
                }
                Op::Scale(a, s) => send(*a, &|da| {
                    for (d, y) in da.iter_mut().zip(dy.data()) {
                        *d += s * y;
                    }
                }),
                Op::Gelu(a) => {
                    let ta = val(*a);
                    send(*a, &|da| {
                        for ((d, y), &x) in da.iter_mut().zip(dy.data()).zip(ta.data()) {
                            let u = GELU_C * (x + 0.044715 * x * x * x);
                            let t = u.tanh();
                            let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                            *d += y * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
                        }
                    });
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let d = dy.cols();
                    let n = dy.rows();
                    let tg = val(*gain);
                    send(*gain, &|dg| {
                        for i in 0..n {
                            for j in 0..d {
                                dg[j] += dy.data()[i * d + j] * xhat[i * d + j];
                            }
                        }
                    });
                    send(*bias, &|db| {
                        for r in dy.data().chunks(d) {
                            add_into(db, r);
                        }
                    });
                    send(*x, &|dx| {
                        for i in 0..n {
                            let dyr = &dy.data()[i * d..(i + 1) * d];
                            let xh = &xhat[i * d..(i + 1) * d];
                            let dxh: Vec<f64> = dyr.iter().zip(tg.data()).map(|(a, b)| a * b).collect();
                            let m1 = dxh.iter().sum::<f64>() / d as f64;
                            let m2 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                            for j in 0..d {
                                dx[i * d + j] += rstd[i] * (dxh[j] - m1 - xh[j] * m2);
                            }
                        }
                    });
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let (tq, tk, tv) = (val(*q), val(*k), val(*v));
                    let (n, d) = (tq.rows(), tq.cols());
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = vec![0.0; n * d];
                    let mut dk = vec![0.0; n * d];
                    let mut dv = vec![0.0; n * d];
                    let mut ds = vec![0.0; n];
                    for h in 0..*heads {
                        let off = h * dh;
                        let ph = &probs[h * n * n..(h + 1) * n * n];
                        for i in 0..n {
                            let doi = &dy.row(i)[off..off + dh];
                            let pi = &ph[i * n..(i + 1) * n];
                            let mut dot = 0.0;
                            for j in 0..n {
                                let vj = &tv.row(j)[off..off + dh];
                                let dp = doi.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                                ds[j] = dp;
                                dot += dp * pi[j];
                                if pi[j] != 0.0 {
                                    for (t, o) in dv[j * d + off..j * d + off + dh].iter_mut().zip(doi) {
                                        *t += pi[j] * o;
                                    }
                                }
                            }
                            let qi = &tq.row(i)[off..off + dh];
                            for j in 0..n {
                                let s = pi[j] * (ds[j] - dot) * scale;
                                if s == 0.0 {
                                    continue;
                                }
                                let kj = &tk.row(j)[off..off + dh];
                                for (t, kk) in dq[i * d + off..i * d + off + dh].iter_mut().zip(kj) {
                                    *t += s * kk;
                                }
                                for (t, qq) in dk[j * d + off..j * d + off + dh].iter_mut().zip(qi) {
                                    *t += s * qq;
                                }
                            }
                        }
                    }
                    send(*q, &|t| add_into(t, &dq));
                    send(*k, &|t| add_into(t, &dk));
                    send(*v, &|t| add_into(t, &dv));
                }
                Op::Rows { src, idx } => {
                    let c = dy.cols();
                    send(*src, &|ds| {
                        for (r, &i) in idx.iter().enumerate() {
                            add_into(&mut ds[i * c..(i + 1) * c], dy.row(r));
                        }
                    });
                }
                Op::EmbedSum { rows } => {
                    let d = dy.cols();
                    for (p, tokens) in rows {
                        let table = &mut grads.params[*p];
                        for (j, &tok) in tokens.iter().enumerate() {
                            if tok != PAD {
                                add_into(table.row_mut(tok as usize), &dy.data()[j * d..(j + 1) * d]);
                            }
                        }
                    }
                }
                Op::SoftmaxXent { logits, targets, probs } => {
                    let s = dy.item();
                    let c = val(*logits).cols();
                    send(*logits, &|dl| {
                        for (i, &y) in targets.iter().enumerate() {
                            for j in 0..c {
                                let ind = if j == y { 1.0 } else { 0.0 };
                                dl[i * c + j] += s * (probs[i * c + j] - ind);
                            }
                        }
                    });
                }
                Op::BinaryFocal { z, labels, focal } => {
                    let s = dy.item();
                    let tz = val(*z);
                    send(*z, &|dz| {
                        for ((d, &zz), &y) in dz.iter_mut().zip(tz.data()).zip(labels) {
                            *d += s * focal_term(zz, y, *focal).1;
                        }
                    });
                }
                Op::Sum(a) => {
                    let s = dy.item();
                    send(*a, &|da| {
                        for d in da.iter_mut() {
                            *d += s;
                        }
                    });
                }
            }
        }
        Ok(grads)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
