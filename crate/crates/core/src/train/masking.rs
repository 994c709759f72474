use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::SlotGrid;
use crate::journey::vocab::MASK;
use crate::journey::{CodeChannel, Vocabulary};

pub const SELECT_PROB: f64 = 0.15;
pub const MASK_PROB: f64 = 0.8;
pub const REPLACE_PROB: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskAction {
    /// Position not selected.
    Keep,
    Mask,
    ReplaceRandom,
    /// Selected, token left unchanged.
    KeepSelected,
}

impl MaskAction {
    pub fn selected(self) -> bool {
        self != MaskAction::Keep
    }
}

/// Which diagnosis positions may be selected for masking.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeFilter {
    /// Only codes starting with this prefix are eligible; `None` admits every diagnosis.
    pub prefix: Option<String>,
}

impl CodeFilter {
    pub fn prefix(p: impl Into<String>) -> Self {
        Self { prefix: Some(p.into()) }
    }

    pub fn admits(&self, vocab: &Vocabulary, token: u32) -> bool {
        match (&self.prefix, vocab.code(CodeChannel::Diagnosis, token)) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some(p), Some(c)) => c.starts_with(p.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskingPlan {
    /// One action per grid column.
    pub actions: Vec<MaskAction>,
    /// Token actually fed at each selected column, in column order.
    pub inputs: Vec<u32>,
    /// `(column, original diagnosis id)` for every selected position.
    pub targets: Vec<(usize, u32)>,
}

impl MaskingPlan {
    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Copy of the grid with the plan's substitutions applied to the diagnosis row.
    pub fn apply(&self, grid: &SlotGrid) -> SlotGrid {
        let mut out = grid.clone();
        for (&(col, _), &tok) in self.targets.iter().zip(&self.inputs) {
            out.diag_row[col] = tok;
        }
        out
    }
}

/// Draws a plan from an explicit generator.
pub fn plan_with_rng(grid: &SlotGrid, vocab: &Vocabulary, filter: &CodeFilter, rng: &mut impl Rng) -> MaskingPlan {
    let real = vocab.diagnosis_ids();
    let mut actions = vec![MaskAction::Keep; grid.m];
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for col in grid.diagnosis_columns() {
        let tok = grid.diag_row[col];
        if !filter.admits(vocab, tok) || rng.random::<f64>() >= SELECT_PROB {
            continue;
        }
        let u: f64 = rng.random();
        let (action, input) = if u < MASK_PROB {
            (MaskAction::Mask, MASK)
        } else if u < MASK_PROB + REPLACE_PROB {
            (MaskAction::ReplaceRandom, rng.random_range(real.clone()))
        } else {
            (MaskAction::KeepSelected, tok)
        };
        actions[col] = action;
        inputs.push(input);
        targets.push((col, tok));
    }
    MaskingPlan { actions, inputs, targets }
}

pub fn make_masking_plan(grid: &SlotGrid, vocab: &Vocabulary, seed: u64) -> MaskingPlan {
    plan_with_rng(grid, vocab, &CodeFilter::default(), &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::journey::vocab::{CLS, PAD, RESERVED, SEP};

    fn vocab() -> Vocabulary {
        Vocabulary::from_codes(vec!["C50".into(), "I10".into(), "E11".into()], vec![], vec![])
    }

    fn grid(tokens: &[u32]) -> SlotGrid {
        let mut g = SlotGrid::empty(tokens.len(), 0, 0);
        g.diag_row.copy_from_slice(tokens);
        g
    }

    #[test]
    fn no_diagnoses_no_plan() {
        let p = make_masking_plan(&grid(&[CLS, PAD, PAD]), &vocab(), 1);
        assert!(p.is_empty());
    }

    #[test]
    fn special_tokens_never_selected() {
        let r = RESERVED;
        let g = grid(&[CLS, r, r + 1, SEP, r + 2, PAD]);
        for seed in 0..500 {
            let p = make_masking_plan(&g, &vocab(), seed);
            for (col, a) in p.actions.iter().enumerate() {
                if a.selected() {
                    assert!(![0, 3, 5].contains(&col));
                }
            }
            for &(col, t) in &p.targets {
                assert_eq!(g.diag_row[col], t);
            }
        }
    }

    #[test]
    fn prefix_filter_restricts_selection() {
        let r = RESERVED;
        let g = grid(&[CLS, r, r + 1, r + 2, SEP]);
        let f = CodeFilter::prefix("C");
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = plan_with_rng(&g, &v, &f, &mut rng);
            assert!(p.targets.iter().all(|&(_, t)| v.code(CodeChannel::Diagnosis, t).unwrap().starts_with('C')));
        }
    }
}
