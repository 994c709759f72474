use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::masking::{plan_with_rng, CodeFilter, MaskingPlan};
use super::metrics::{binary_metrics, BinaryMetrics, MlmMetrics, MlmTally};
use super::optim::{learning_rate, BertAdam, Warmup};
use crate::encoder::{encode, EncoderConfig, SlotGrid};
use crate::error::{Error, Result};
use crate::journey::{patient_key, PatientJourney, TaskWindow, Vocabulary};
use crate::nn::graph::focal_term;
use crate::nn::model::{cls_logit, forward_grid, mlm_logits, plos_logit, Dropout};
use crate::nn::{Focal, Gradients, Graph, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mlm,
    MlmPlos,
    Classify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub loss: LossKind,
    pub warmup: Warmup,
    pub epochs: usize,
    pub batch_size: usize,
    pub objective: Objective,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::DomainError(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::DomainError("epochs and batch size must be positive".into()));
        }
        if let Warmup::Linear { proportion, weight_decay } = self.warmup {
            if !(0.0..=1.0).contains(&proportion) || proportion == 0.0 || weight_decay < 0.0 {
                return Err(Error::DomainError(format!("bad warmup {:?}", self.warmup)));
            }
        }
        Ok(())
    }
}

/// One encoded patient with an optional binary label (task label or prolonged stay).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub patient_id: String,
    pub grid: SlotGrid,
    pub label: Option<bool>,
    pub group: Option<String>,
}

/// Examples prepared for a task and the number of patients without an index event.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub examples: Vec<Example>,
    pub window_empty: usize,
}

/// Applies the task window, attaches labels and encodes.
pub fn prepare_examples(
    journeys: &[PatientJourney],
    labels: &BTreeMap<String, bool>,
    window: &TaskWindow,
    vocab: &Vocabulary,
    encoder: &EncoderConfig,
) -> Result<Prepared> {
    let mut examples = Vec::with_capacity(journeys.len());
    let mut window_empty = 0;
    for j in journeys {
        let Some(w) = window.apply(j) else {
            window_empty += 1;
            continue;
        };
        let label = *labels
            .get(&j.patient_id)
            .ok_or_else(|| Error::DomainError(format!("no label for patient {}", j.patient_id)))?;
        examples.push(Example {
            patient_id: j.patient_id.clone(),
            grid: encode(&w, vocab, encoder)?,
            label: Some(label),
            group: None,
        });
    }
    Ok(Prepared { examples, window_empty })
}

/// Encodes whole journeys for pre-training; the label is the prolonged-stay flag.
pub fn pretrain_examples(journeys: &[PatientJourney], vocab: &Vocabulary, encoder: &EncoderConfig) -> Result<Vec<Example>> {
    journeys
        .iter()
        .map(|j| {
            Ok(Example {
                patient_id: j.patient_id.clone(),
                grid: encode(j, vocab, encoder)?,
                label: Some(j.prolonged_stay()),
                group: None,
            })
        })
        .collect()
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn example_rng(seed: u64, epoch: usize, patient_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(patient_key(patient_id, mix(seed, epoch as u64 + 1)))
}

/// Loss weights of a single example's contribution to a batch objective.
#[derive(Debug, Clone, Copy)]
pub struct Weights {
    pub mlm: f64,
    pub binary: f64,
}

/// Per-example outputs besides the gradient.
#[derive(Debug, Clone, Default)]
pub struct ExampleOutput {
    pub loss: f64,
    pub mlm: MlmTally,
    pub logit: Option<f64>,
}

/// Builds the graph for one example and optionally back-propagates.
///
/// The MLM term is the summed cross-entropy of the plan's targets times `weights.mlm`;
/// the binary term (PLOS or classifier) is the focal loss times `weights.binary`.
pub fn example_objective(
    params: &ModelParams,
    example: &Example,
    objective: Objective,
    plan: Option<&MaskingPlan>,
    focal: Focal,
    weights: Weights,
    dropout_rng: Option<&mut ChaCha8Rng>,
    with_grad: bool,
) -> Result<(ExampleOutput, Option<Gradients>)> {
    let mut g = Graph::new(&params.tensors);
    let masked;
    let grid = match plan {
        Some(p) => {
            masked = p.apply(&example.grid);
            &masked
        }
        None => &example.grid,
    };
    let dropout = dropout_rng.map(|rng| Dropout {
        rate: params.config.dropout,
        rng,
    });
    let enc = forward_grid(&mut g, params, grid, false, dropout)?;
    let mut out = ExampleOutput::default();
    let mut terms = Vec::new();

    if matches!(objective, Objective::Mlm | Objective::MlmPlos) {
        if let Some(p) = plan.filter(|p| !p.is_empty()) {
            let cols: Vec<usize> = p.targets.iter().map(|t| t.0).collect();
            let targets: Vec<usize> = p.targets.iter().map(|t| t.1 as usize).collect();
            let logits = mlm_logits(&mut g, params, enc.hidden, cols)?;
            {
                let lt = g.value(logits);
                for (i, &t) in targets.iter().enumerate() {
                    let row = lt.row(i);
                    let (arg, max) = row
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
                    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    let lse = max + z.ln();
                    out.mlm.push(t as u32, arg as u32, (max - lse).exp(), lse - row[t]);
                }
            }
            let xent = g.softmax_xent(logits, targets)?;
            terms.push(g.scale(xent, weights.mlm));
        }
    }
    let binary = match objective {
        Objective::Mlm => None,
        Objective::MlmPlos => Some(plos_logit(&mut g, params, enc.hidden)?),
        Objective::Classify => Some(cls_logit(&mut g, params, enc.hidden)?),
    };
    if let (Some(z), Some(y)) = (binary, example.label) {
        let zv = g.value(z).item();
        out.logit = Some(zv);
        let l = g.binary_focal(z, vec![y], focal)?;
        terms.push(g.scale(l, weights.binary));
    } else if let Some(z) = binary {
        out.logit = Some(g.value(z).item());
    }

    let Some(&first) = terms.first() else {
        return Ok((out, with_grad.then(|| Gradients::zeros_for(&params.tensors))));
    };
    let mut total = first;
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    out.loss = g.value(total).item();
    let grads = if with_grad { Some(g.backward(total)?) } else { None };
    Ok((out, grads))
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Pre-sigmoid classifier outputs for every example.
pub fn predict_logits(params: &ModelParams, examples: &[Example]) -> Result<Vec<f64>> {
    examples
        .par_iter()
        .map(|e| {
            let mut g = Graph::new(&params.tensors);
            let enc = forward_grid(&mut g, params, &e.grid, false, None)?;
            let z = cls_logit(&mut g, params, enc.hidden)?;
            Ok(g.value(z).item())
        })
        .collect()
}

/// Classifier probabilities for every example.
pub fn predict(params: &ModelParams, examples: &[Example]) -> Result<Vec<f64>> {
    Ok(predict_logits(params, examples)?.into_iter().map(sigmoid).collect())
}

/// Probabilities and binary metrics of the classifier head on labelled examples.
pub fn evaluate(params: &ModelParams, examples: &[Example]) -> Result<(Vec<f64>, BinaryMetrics)> {
    let probs = predict(params, examples)?;
    let labels = labels_of(examples)?;
    let m = binary_metrics(&probs, &labels)?;
    Ok((probs, m))
}

fn labels_of(examples: &[Example]) -> Result<Vec<bool>> {
    examples
        .iter()
        .map(|e| e.label.ok_or_else(|| Error::DomainError(format!("example {} has no label", e.patient_id))))
        .collect()
}

/// Fixed validation plans so that epochs are compared on the same masked positions.
fn validation_plans(examples: &[Example], vocab: &Vocabulary, filter: &CodeFilter, seed: u64) -> Vec<MaskingPlan> {
    examples
        .iter()
        .map(|e| plan_with_rng(&e.grid, vocab, filter, &mut example_rng(seed, usize::MAX - 1, &e.patient_id)))
        .collect()
}

/// MLM metrics (and PLOS loss/AUROC for MLM+PLOS) on examples under the given plans.
pub fn evaluate_mlm(
    params: &ModelParams,
    examples: &[Example],
    plans: &[MaskingPlan],
    objective: Objective,
) -> Result<(MlmMetrics, Option<f64>, Option<f64>)> {
    let w = Weights { mlm: 1.0, binary: 1.0 };
    let outs: Vec<ExampleOutput> = examples
        .par_iter()
        .zip(plans.par_iter())
        .map(|(e, p)| {
            let objective = if objective == Objective::MlmPlos { Objective::MlmPlos } else { Objective::Mlm };
            example_objective(params, e, objective, Some(p), Focal::CROSS_ENTROPY, w, None, false).map(|r| r.0)
        })
        .collect::<Result<_>>()?;
    let mut tally = MlmTally::default();
    let mut plos_loss = 0.0;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (o, e) in outs.into_iter().zip(examples) {
        if let (Some(z), Some(y)) = (o.logit, e.label) {
            plos_loss += focal_term(z, y, Focal::CROSS_ENTROPY).0;
            scores.push(sigmoid(z));
            labels.push(y);
        }
        tally.merge(o.mlm);
    }
    if objective != Objective::MlmPlos || labels.is_empty() {
        return Ok((tally.finish(), None, None));
    }
    let auroc = super::metrics::auroc(&scores, &labels).ok();
    Ok((tally.finish(), Some(plos_loss / labels.len() as f64), auroc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRow {
    pub epoch: usize,
    pub split: String,
    pub mlm_loss: f64,
    pub plos_loss: Option<f64>,
    pub precision: f64,
    pub precision_p50: f64,
    pub balanced_accuracy: f64,
    pub plos_auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub auroc: Option<f64>,
    pub aps: Option<f64>,
    pub precision: f64,
    pub balanced_accuracy: f64,
}

pub fn write_log<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_precision: f64,
    pub log: Vec<PretrainRow>,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub validation: Option<BinaryMetrics>,
    pub log: Vec<FinetuneRow>,
}

fn total_steps(n: usize, cfg: &TrainConfig) -> usize {
    n.div_ceil(cfg.batch_size) * cfg.epochs
}

/// Sums example gradients in batch order, independent of how many threads computed them.
fn reduce(results: Vec<(ExampleOutput, Option<Gradients>)>, params: &ModelParams) -> (Vec<ExampleOutput>, Gradients) {
    let mut total = Gradients::zeros_for(&params.tensors);
    let mut outs = Vec::with_capacity(results.len());
    for (o, g) in results {
        if let Some(g) = g {
            total.accumulate(&g);
        }
        outs.push(o);
    }
    (outs, total)
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 0xE90C + epoch as u64)));
    order
}

fn mlm_loop(
    mut params: ModelParams,
    train: &[Example],
    validation: &[Example],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    filter: &CodeFilter,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyCohort("pre-training split has no patients".into()));
    }
    let objective = if cfg.objective == Objective::Classify { Objective::Mlm } else { cfg.objective };
    let val_plans = validation_plans(validation, vocab, filter, cfg.seed);
    let mut opt = BertAdam::new(&params);
    let total = total_steps(train.len(), cfg);
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut tally = MlmTally::default();
        let mut plos_sum = 0.0;
        let mut plos_n = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let plans: Vec<MaskingPlan> = batch
                .iter()
                .map(|&i| {
                    let e = &train[i];
                    plan_with_rng(&e.grid, vocab, filter, &mut example_rng(cfg.seed, epoch, &e.patient_id))
                })
                .collect();
            let selected: usize = plans.iter().map(|p| p.targets.len()).sum();
            let w = Weights {
                mlm: if selected > 0 { 1.0 / selected as f64 } else { 0.0 },
                binary: 1.0 / batch.len() as f64,
            };
            let results = batch
                .par_iter()
                .zip(plans.par_iter())
                .map(|(&i, p)| {
                    let e = &train[i];
                    let mut rng = example_rng(cfg.seed ^ 0xD0, epoch, &e.patient_id);
                    example_objective(&params, e, objective, Some(p), cfg.loss.focal(), w, Some(&mut rng), true)
                })
                .collect::<Result<Vec<_>>>()?;
            let (outs, grads) = reduce(results, &params);
            for (o, &i) in outs.into_iter().zip(batch) {
                if let (Some(z), Some(y)) = (o.logit, train[i].label) {
                    plos_sum += focal_term(z, y, cfg.loss.focal()).0;
                    plos_n += 1;
                }
                tally.merge(o.mlm);
            }
            let lr = learning_rate(cfg.lr, cfg.warmup, opt.step + 1, total);
            opt.update(&mut params, &grads, lr, cfg.warmup.weight_decay())?;
        }
        let tm = tally.finish();
        log.push(PretrainRow {
            epoch,
            split: "train".into(),
            mlm_loss: tm.loss,
            plos_loss: (plos_n > 0).then(|| plos_sum / plos_n as f64),
            precision: tm.precision,
            precision_p50: tm.precision_p50,
            balanced_accuracy: tm.balanced_accuracy,
            plos_auroc: None,
        });
        let score = if validation.is_empty() {
            tm.precision
        } else {
            let (vm, plos_loss, plos_auroc) = evaluate_mlm(&params, validation, &val_plans, objective)?;
            log.push(PretrainRow {
                epoch,
                split: "validation".into(),
                mlm_loss: vm.loss,
                plos_loss,
                precision: vm.precision,
                precision_p50: vm.precision_p50,
                balanced_accuracy: vm.balanced_accuracy,
                plos_auroc,
            });
            vm.precision
        };
        log::info!("epoch {epoch}: train mlm loss {:.4}, selection precision {:.4}", tm.loss, score);
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, epoch, params.clone()));
        }
    }
    let (best_precision, best_epoch, params) = best.expect("at least one epoch");
    Ok(PretrainOutcome {
        params,
        best_epoch,
        best_precision,
        log,
    })
}

/// Masked-diagnosis pre-training, optionally with the prolonged-stay head.
/// Returns the parameters of the epoch with the best validation MLM precision.
pub fn pretrain(
    params: ModelParams,
    train: &[Example],
    validation: &[Example],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<PretrainOutcome> {
    mlm_loop(params, train, validation, vocab, cfg, &CodeFilter::default())
}

/// Second MLM pass where only positions admitted by `filter` may be masked.
pub fn adapt_pretrain(
    params: ModelParams,
    train: &[Example],
    validation: &[Example],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    filter: &CodeFilter,
) -> Result<PretrainOutcome> {
    let any = train
        .iter()
        .any(|e| e.grid.diagnosis_columns().any(|c| filter.admits(vocab, e.grid.diag_row[c])));
    if !any {
        return Err(Error::NoMaskableCodes);
    }
    mlm_loop(params, train, validation, vocab, cfg, filter)
}

fn aps_key(m: &Option<BinaryMetrics>) -> f64 {
    m.as_ref().and_then(|m| m.aps).unwrap_or(f64::NEG_INFINITY)
}

/// Trains the classifier head end to end and keeps the epoch with the best validation APS.
pub fn finetune(
    mut params: ModelParams,
    train: &[Example],
    validation: &[Example],
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyCohort("fine-tuning split has no patients".into()));
    }
    let train_labels = labels_of(train)?;
    let focal = cfg.loss.focal();
    let mut opt = BertAdam::new(&params);
    let total = total_steps(train.len(), cfg);
    let mut log = Vec::new();
    let mut best: Option<(Option<BinaryMetrics>, usize, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut logits = vec![0.0; train.len()];
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let w = Weights {
                mlm: 0.0,
                binary: 1.0 / batch.len() as f64,
            };
            let results = batch
                .par_iter()
                .map(|&i| {
                    let e = &train[i];
                    let mut rng = example_rng(cfg.seed ^ 0xD0, epoch, &e.patient_id);
                    example_objective(&params, e, Objective::Classify, None, focal, w, Some(&mut rng), true)
                })
                .collect::<Result<Vec<_>>>()?;
            let (outs, grads) = reduce(results, &params);
            for (o, &i) in outs.iter().zip(batch) {
                logits[i] = o.logit.unwrap_or(0.0);
                loss_sum += o.loss / w.binary;
            }
            let lr = learning_rate(cfg.lr, cfg.warmup, opt.step + 1, total);
            opt.update(&mut params, &grads, lr, cfg.warmup.weight_decay())?;
        }
        let probs: Vec<f64> = logits.iter().map(|z| sigmoid(*z)).collect();
        let tm = binary_metrics(&probs, &train_labels)?;
        log.push(finetune_row(epoch, "train", loss_sum / train.len() as f64, &tm));

        let vm = if validation.is_empty() {
            None
        } else {
            let vz = predict_logits(&params, validation)?;
            let vp: Vec<f64> = vz.iter().map(|z| sigmoid(*z)).collect();
            let vm = binary_metrics(&vp, &labels_of(validation)?)?;
            let vl = validation
                .iter()
                .zip(&vz)
                .map(|(e, z)| focal_term(*z, e.label.unwrap_or(false), focal).0)
                .sum::<f64>()
                / validation.len() as f64;
            log.push(finetune_row(epoch, "validation", vl, &vm));
            Some(vm)
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, validation aps {:?}",
            loss_sum / train.len() as f64,
            vm.as_ref().and_then(|m| m.aps)
        );
        let replace = match &best {
            None => true,
            Some(b) => validation.is_empty() || aps_key(&vm) > aps_key(&b.0),
        };
        if replace {
            best = Some((vm, epoch, params.clone()));
        }
    }
    let (validation, best_epoch, params) = best.expect("at least one epoch");
    Ok(FinetuneOutcome {
        params,
        best_epoch,
        validation,
        log,
    })
}

fn finetune_row(epoch: usize, split: &str, loss: f64, m: &BinaryMetrics) -> FinetuneRow {
    FinetuneRow {
        epoch,
        split: split.into(),
        loss,
        auroc: m.auroc,
        aps: m.aps,
        precision: m.precision,
        balanced_accuracy: m.balanced_accuracy,
    }
}
