use serde::{Deserialize, Serialize};

use super::masking::MaskingPlan;
use crate::error::{Error, Result};
use crate::nn::{Focal, Tensor};

/// Classification loss of the fine-tuning head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Focal { gamma: f64, alpha: Option<f64> },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        if let LossKind::Focal { gamma, alpha } = *self {
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(Error::DomainError(format!("focal gamma {gamma} must be >= 0")));
            }
            if let Some(a) = alpha {
                if !(a > 0.0 && a <= 1.0) {
                    return Err(Error::DomainError(format!("focal alpha {a} must lie in (0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn focal(&self) -> Focal {
        match *self {
            LossKind::CrossEntropy => Focal::CROSS_ENTROPY,
            LossKind::Focal { gamma, alpha } => Focal { gamma, alpha },
        }
    }

    pub fn name(&self) -> String {
        match *self {
            LossKind::CrossEntropy => "cross_entropy".into(),
            LossKind::Focal { gamma, alpha: None } => format!("focal(gamma={gamma})"),
            LossKind::Focal { gamma, alpha: Some(a) } => format!("focal(gamma={gamma},alpha={a})"),
        }
    }
}

/// `-alpha * (1 - p)^gamma * ln p` for the probability `p` of the true class.
pub fn focal_loss(p: f64, gamma: f64, alpha: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::DomainError(format!("probability {p} outside (0, 1)")));
    }
    Ok(-alpha * (1.0 - p).powf(gamma) * p.ln())
}

/// Mean cross-entropy over the plan's selected positions; `logits` has one row per grid column.
pub fn mlm_loss(logits: &Tensor, plan: &MaskingPlan) -> Result<f64> {
    if plan.is_empty() {
        return Err(Error::EmptyPlan);
    }
    let mut total = 0.0;
    for &(col, target) in &plan.targets {
        let row = logits.row(col);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[target as usize];
    }
    Ok(total / plan.targets.len() as f64)
}
