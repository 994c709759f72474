use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::types::PatientJourney;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CohortSplit {
    pub train: Vec<PatientJourney>,
    pub validation: Vec<PatientJourney>,
    pub test: Vec<PatientJourney>,
}

impl CohortSplit {
    pub fn get(&self, split: Split) -> &[PatientJourney] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// patient id → split label.
    pub fn assignment(&self) -> BTreeMap<String, Split> {
        Split::ALL
            .into_iter()
            .flat_map(|s| self.get(s).iter().map(move |j| (j.patient_id.clone(), s)))
            .collect()
    }
}

/// Stable 64-bit key of a patient under a seed.
pub fn patient_key(patient_id: &str, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(patient_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

fn validate(ratios: [f64; 3]) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidRatios(ratios.to_vec()));
    }
    Ok(())
}

/// Largest-remainder apportionment of `n` items over `ratios`.
fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut sizes = exact.map(|e| (e + 1e-9).floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Partitions journeys into train/validation/test with exact apportioned sizes.
///
/// Patients are ranked by their seeded key, so the result depends only on the
/// set of patient ids and the seed, never on input order.
pub fn split_cohort(journeys: &[PatientJourney], ratios: [f64; 3], seed: u64) -> Result<CohortSplit> {
    split_cohort_aligned(journeys, ratios, seed, &BTreeMap::new())
}

/// Like [`split_cohort`], but patients present in `reference` keep the split
/// they were given there; the remaining patients fill the splits towards the
/// target sizes.
pub fn split_cohort_aligned(
    journeys: &[PatientJourney],
    ratios: [f64; 3],
    seed: u64,
    reference: &BTreeMap<String, Split>,
) -> Result<CohortSplit> {
    validate(ratios)?;
    let target = apportion(journeys.len(), ratios);

    let mut out = CohortSplit::default();
    let mut free: Vec<&PatientJourney> = Vec::new();
    for j in journeys {
        match reference.get(&j.patient_id) {
            Some(Split::Train) => out.train.push(j.clone()),
            Some(Split::Validation) => out.validation.push(j.clone()),
            Some(Split::Test) => out.test.push(j.clone()),
            None => free.push(j),
        }
    }
    free.sort_by_key(|j| (patient_key(&j.patient_id, seed), j.patient_id.clone()));

    let mut need = [
        target[0].saturating_sub(out.train.len()),
        target[1].saturating_sub(out.validation.len()),
        target[2].saturating_sub(out.test.len()),
    ];
    let mut cursor = 0;
    for j in free {
        while cursor < 2 && need[cursor] == 0 {
            cursor += 1;
        }
        if need[cursor] > 0 {
            need[cursor] -= 1;
        }
        match cursor {
            0 => out.train.push(j.clone()),
            1 => out.validation.push(j.clone()),
            _ => out.test.push(j.clone()),
        }
    }
    for part in [&mut out.train, &mut out.validation, &mut out.test] {
        part.sort_by_key(|j| (patient_key(&j.patient_id, seed), j.patient_id.clone()));
    }
    Ok(out)
}
