use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::metrics::BinaryMetrics;
use super::optim::Warmup;
use super::trainer::{evaluate, finetune, predict, prepare_examples, Example, TrainConfig};
use crate::encoder::{encode, shuffle_within_visits, ChannelFlags, EncoderConfig};
use crate::error::{Error, Result};
use crate::journey::{PatientJourney, TaskWindow, Vocabulary};
use crate::nn::ModelParams;

pub const PAPER_LEARNING_RATES: [f64; 3] = [3e-5, 4e-5, 5e-5];

/// One point of the fine-tuning hyper-parameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr: f64,
    pub loss: LossKind,
    pub warmup: Warmup,
}

/// The four loss settings of the search space.
pub fn grid_losses() -> [LossKind; 4] {
    [
        LossKind::CrossEntropy,
        LossKind::Focal { gamma: 2.0, alpha: None },
        LossKind::Focal { gamma: 5.0, alpha: None },
        LossKind::Focal {
            gamma: 2.0,
            alpha: Some(0.75),
        },
    ]
}

/// Full cross product: learning rates × losses × {no warmup, warmup}.
pub fn search_space(learning_rates: &[f64]) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for &lr in learning_rates {
        for loss in grid_losses() {
            for warmup in [Warmup::None, Warmup::DEFAULT] {
                out.push(GridPoint { lr, loss, warmup });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lr: f64,
    pub loss: String,
    pub warmup: bool,
    pub best_epoch: usize,
    pub validation_aps: Option<f64>,
    pub validation_auroc: Option<f64>,
    pub validation_precision: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub rows: Vec<GridRow>,
    pub best: usize,
    pub point: GridPoint,
    pub params: ModelParams,
}

/// Fine-tunes every grid point from `init` and selects by validation APS.
///
/// Only training and validation examples are accepted; test data never reaches the search.
pub fn grid_search(
    init: &ModelParams,
    train: &[Example],
    validation: &[Example],
    base: &TrainConfig,
    grid: &[GridPoint],
) -> Result<GridOutcome> {
    if grid.is_empty() {
        return Err(Error::DomainError("empty search grid".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for (i, point) in grid.iter().enumerate() {
        let cfg = TrainConfig {
            lr: point.lr,
            loss: point.loss,
            warmup: point.warmup,
            ..base.clone()
        };
        let out = finetune(init.clone(), train, validation, &cfg)?;
        let v = out.validation.as_ref();
        let key = v.and_then(|m| m.aps).unwrap_or(f64::NEG_INFINITY);
        log::info!("grid point {i}: {:?} validation aps {key:.4}", point);
        rows.push(GridRow {
            lr: point.lr,
            loss: point.loss.name(),
            warmup: point.warmup.is_active(),
            best_epoch: out.best_epoch,
            validation_aps: v.and_then(|m| m.aps),
            validation_auroc: v.and_then(|m| m.auroc),
            validation_precision: v.map(|m| m.precision),
        });
        if best.as_ref().is_none_or(|b| key > b.0) {
            best = Some((key, i, out.params));
        }
    }
    let (_, best, params) = best.expect("non-empty grid");
    Ok(GridOutcome {
        rows,
        best,
        point: grid[best],
        params,
    })
}

/// A feature configuration of the ablation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub name: String,
    pub include: ChannelFlags,
}

/// Diagnosis-only baseline, each added channel group alone, and everything.
pub fn standard_arms() -> Vec<AblationArm> {
    let arm = |name: &str, procedures, labs, observations| AblationArm {
        name: name.into(),
        include: ChannelFlags {
            procedures,
            labs,
            observations,
        },
    };
    vec![
        arm("diagnosis_only", false, false, false),
        arm("plus_procedures", true, false, false),
        arm("plus_labs", false, true, false),
        arm("plus_observations", false, false, true),
        arm("all_channels", true, true, true),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub task: String,
    pub best_epoch: usize,
    pub auroc: Option<f64>,
    pub aps: Option<f64>,
    pub precision: f64,
}

/// Journeys and labels of the three splits for one task.
pub struct TaskData<'a> {
    pub task: &'a str,
    pub window: &'a TaskWindow,
    pub labels: &'a BTreeMap<String, bool>,
    pub train: &'a [PatientJourney],
    pub validation: &'a [PatientJourney],
    pub test: &'a [PatientJourney],
}

/// Re-encodes the task under each arm's channel flags, fine-tunes from `init` and reports test metrics.
pub fn ablation_run(
    arms: &[AblationArm],
    data: &TaskData<'_>,
    vocab: &Vocabulary,
    encoder: &EncoderConfig,
    init: &ModelParams,
    cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(arms.len());
    for arm in arms {
        let enc = EncoderConfig {
            include: arm.include,
            ..encoder.clone()
        };
        let prep = |j: &[PatientJourney]| prepare_examples(j, data.labels, data.window, vocab, &enc).map(|p| p.examples);
        let (train, validation, test) = (prep(data.train)?, prep(data.validation)?, prep(data.test)?);
        let out = finetune(init.clone(), &train, &validation, cfg)?;
        let (_, m): (_, BinaryMetrics) = evaluate(&out.params, &test)?;
        log::info!("ablation {}: test auroc {:?}", arm.name, m.auroc);
        rows.push(AblationRow {
            arm: arm.name.clone(),
            task: data.task.into(),
            best_epoch: out.best_epoch,
            auroc: m.auroc,
            aps: m.aps,
            precision: m.precision,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientPurity {
    pub patient_id: String,
    pub positive_predictions: usize,
    pub purity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    pub repeats: usize,
    pub patients: Vec<PatientPurity>,
    pub mean: f64,
    pub std: f64,
}

/// Share of the modal predicted label over `repeats` within-visit shuffles of each journey.
///
/// Journeys are expected to be already cut to the task window.
pub fn shuffle_purity(
    params: &ModelParams,
    journeys: &[PatientJourney],
    vocab: &Vocabulary,
    encoder: &EncoderConfig,
    repeats: usize,
    seed: u64,
) -> Result<PurityReport> {
    if repeats == 0 {
        return Err(Error::DomainError("at least one repeat is required".into()));
    }
    if journeys.is_empty() {
        return Err(Error::EmptyCohort("no patients for the shuffle test".into()));
    }
    let mut patients = Vec::with_capacity(journeys.len());
    for j in journeys {
        let examples = (0..repeats)
            .map(|r| {
                let shuffled = shuffle_within_visits(j, seed.wrapping_add(r as u64));
                Ok(Example {
                    patient_id: j.patient_id.clone(),
                    grid: encode(&shuffled, vocab, encoder)?,
                    label: None,
                    group: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let positive = predict(params, &examples)?.iter().filter(|p| **p >= 0.5).count();
        let modal = positive.max(repeats - positive);
        patients.push(PatientPurity {
            patient_id: j.patient_id.clone(),
            positive_predictions: positive,
            purity: modal as f64 / repeats as f64,
        });
    }
    let n = patients.len() as f64;
    let mean = patients.iter().map(|p| p.purity).sum::<f64>() / n;
    let std = (patients.iter().map(|p| (p.purity - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(PurityReport {
        repeats,
        patients,
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn space_has_twenty_four_points() {
        let s = search_space(&PAPER_LEARNING_RATES);
        assert_eq!(s.len(), 24);
        assert_eq!(s.iter().filter(|p| p.warmup.is_active()).count(), 12);
    }
}
