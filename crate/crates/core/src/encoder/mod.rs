//! Vertical slot-grid encoding of journeys.
//!
//! A visit owns as many columns ("slots") as it has diagnoses. Procedures and
//! labs are reshaped row-major into blocks of that width and stacked under
//! the visit's diagnosis columns, so adding concepts never widens the grid.
//! Per-visit scalars (age, segment, position, gender, BMI, smoking) are copied
//! across the visit's columns including its trailing SEP.

mod grid;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use grid::{Channel, GridRow, SlotGrid};

use crate::error::{Error, Result};
use crate::journey::vocab::{CLS, PAD, RESERVED, SEP, UNK};
use crate::journey::{patient_key, CodeChannel, Gender, PatientJourney, Vocabulary};

pub const MAX_AGE: u32 = 120;
pub const BMI_MIN: u32 = 10;
pub const BMI_MAX: u32 = 60;

/// Which optional channels are encoded; disabled channels are all PAD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelFlags {
    pub procedures: bool,
    pub labs: bool,
    /// Gender, BMI and smoking.
    pub observations: bool,
}

impl ChannelFlags {
    pub const ALL: ChannelFlags = ChannelFlags {
        procedures: true,
        labs: true,
        observations: true,
    };
    /// Diagnosis, age, segment and position only.
    pub const DIAGNOSIS_ONLY: ChannelFlags = ChannelFlags {
        procedures: false,
        labs: false,
        observations: false,
    };
}

impl Default for ChannelFlags {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Sentence length.
    pub m: usize,
    pub n_proc: Option<usize>,
    pub n_lab: Option<usize>,
    pub percentile: f64,
    pub include: ChannelFlags,
}

impl EncoderConfig {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            n_proc: None,
            n_lab: None,
            percentile: 0.95,
            include: ChannelFlags::ALL,
        }
    }

    /// Fits the procedure and lab row caps on a corpus.
    pub fn fitted(mut self, journeys: &[PatientJourney]) -> Result<Self> {
        let (p, l) = fit_row_caps(journeys, self.percentile)?;
        self.n_proc = Some(p);
        self.n_lab = Some(l);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 3 {
            return Err(Error::ConfigUnfitted(format!("m = {} but at least 3 is required", self.m)));
        }
        if !(self.percentile > 0.0 && self.percentile <= 1.0) {
            return Err(Error::ConfigUnfitted(format!("percentile {} outside (0, 1]", self.percentile)));
        }
        match (self.n_proc, self.n_lab) {
            (Some(p), Some(l)) if p >= 1 && l >= 1 => Ok(()),
            (Some(_), Some(_)) => Err(Error::ConfigUnfitted("row caps must be at least 1".into())),
            _ => Err(Error::ConfigUnfitted("row caps not fitted; call fit_row_caps first".into())),
        }
    }

    fn caps(&self) -> Result<(usize, usize)> {
        self.validate()?;
        Ok((self.n_proc.unwrap_or(1), self.n_lab.unwrap_or(1)))
    }
}

/// Embedding table sizes per [`Channel`], reserved ids included.
pub fn table_sizes(vocab: &Vocabulary, m: usize) -> [usize; 9] {
    let r = RESERVED as usize;
    [
        vocab.size(CodeChannel::Diagnosis),
        r + MAX_AGE as usize + 1,
        r + 2,
        r + m,
        r + 3,
        r + (BMI_MAX - BMI_MIN) as usize + 1,
        r + 4,
        vocab.size(CodeChannel::Procedure),
        vocab.size(CodeChannel::Lab),
    ]
}

pub fn age_token(age: u32) -> u32 {
    RESERVED + age.min(MAX_AGE)
}

pub fn gender_token(g: Gender) -> u32 {
    RESERVED
        + match g {
            Gender::M => 0,
            Gender::F => 1,
            Gender::Unknown => 2,
        }
}

/// BMI bucket of width 1 clamped to [10, 60]; never-observed BMI is UNK.
pub fn bmi_token(bmi: Option<u32>) -> u32 {
    bmi.map_or(UNK, |b| RESERVED + b.clamp(BMI_MIN, BMI_MAX) - BMI_MIN)
}

/// Row-major reshape of a visit's concept ids into blocks `slots` wide.
///
/// Equal count: one row. More items than slots: `ceil(len / slots)` rows with
/// the last PAD-completed. Fewer (including none): one PAD-completed row.
pub fn reshape_channel(items: &[u32], slots: usize) -> Vec<Vec<u32>> {
    assert!(slots >= 1, "a visit has at least one slot");
    if items.is_empty() {
        return vec![vec![PAD; slots]];
    }
    items
        .chunks(slots)
        .map(|chunk| {
            let mut row = chunk.to_vec();
            row.resize(slots, PAD);
            row
        })
        .collect()
}

fn block_rows(len: usize, slots: usize) -> usize {
    len.div_ceil(slots).max(1)
}

/// Nearest-rank percentile of a list of counts.
pub fn nearest_rank(values: &mut [usize], percentile: f64) -> usize {
    values.sort_unstable();
    let n = values.len();
    let rank = ((percentile * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    values[rank - 1]
}

/// Procedure and lab row caps: the nearest-rank percentile of per-visit block heights.
pub fn fit_row_caps(journeys: &[PatientJourney], percentile: f64) -> Result<(usize, usize)> {
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::DomainError(format!("percentile {percentile} outside (0, 1]")));
    }
    let mut procs = Vec::new();
    let mut labs = Vec::new();
    for v in journeys.iter().flat_map(|j| &j.visits) {
        let slots = v.diagnoses.len();
        if slots == 0 {
            continue;
        }
        procs.push(block_rows(v.procedures.len(), slots));
        labs.push(block_rows(v.labs.len(), slots));
    }
    if procs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok((nearest_rank(&mut procs, percentile), nearest_rank(&mut labs, percentile)))
}

/// Encodes a normalized journey into its slot grid.
///
/// Journeys wider than `m` lose their oldest visits; a single visit wider
/// than `m - 1` keeps its first `m - 1` diagnoses.
pub fn encode(journey: &PatientJourney, vocab: &Vocabulary, config: &EncoderConfig) -> Result<SlotGrid> {
    let (n_proc, n_lab) = config.caps()?;
    if vocab.codes(CodeChannel::Diagnosis).is_empty() {
        return Err(Error::VocabularyMissing("diagnosis".into()));
    }
    let m = config.m;
    let mut grid = SlotGrid::empty(m, n_proc, n_lab);
    if journey.visits.is_empty() {
        grid.diag_row[0] = CLS;
        grid.attention_mask[0] = true;
        return Ok(grid);
    }

    // widest suffix of visits fitting in m columns: CLS + diagnoses + separators between visits
    let visits = &journey.visits;
    let mut first = visits.len() - 1;
    let mut width = 1 + visits[first].diagnoses.len();
    while first > 0 {
        let extra = visits[first - 1].diagnoses.len() + 1;
        if width + extra > m {
            break;
        }
        width += extra;
        first -= 1;
    }
    let kept = &visits[first..];

    let include = config.include;
    let gender = gender_token(journey.gender);
    let mut col = 0;
    for (vi, visit) in kept.iter().enumerate() {
        let age = age_token(visit.age);
        let segment = RESERVED + (vi % 2) as u32;
        let position = RESERVED + vi.min(m - 1) as u32;
        if vi == 0 {
            grid.diag_row[0] = CLS;
            grid.age_row[0] = age;
            grid.segment_row[0] = segment;
            grid.position_row[0] = position;
            col = 1;
        } else {
            grid.diag_row[col] = SEP;
            col += 1;
        }
        let diags: Vec<u32> = visit.diagnoses.iter().map(|c| vocab.id(CodeChannel::Diagnosis, c)).take(m - col).collect();
        let slots = diags.len();
        let start = col;
        let observations = [
            gender,
            bmi_token(visit.bmi),
            RESERVED + visit.smoking.map_or(3, |s| s.index() as u32),
        ];
        // this visit's columns, plus the separator that precedes the next kept visit
        let end = (start + slots + usize::from(vi + 1 < kept.len())).min(m);
        for j in start..end {
            grid.age_row[j] = age;
            grid.segment_row[j] = segment;
            grid.position_row[j] = position;
            grid.column_visit[j] = Some(vi);
            if include.observations {
                grid.gender_row[j] = observations[0];
                grid.bmi_row[j] = observations[1];
                grid.smoking_row[j] = observations[2];
            }
        }
        for (j, id) in diags.iter().enumerate() {
            grid.diag_row[start + j] = *id;
        }
        if slots > 0 {
            for (enabled, channel, rows) in [
                (include.procedures, CodeChannel::Procedure, &mut grid.proc_rows),
                (include.labs, CodeChannel::Lab, &mut grid.lab_rows),
            ] {
                if !enabled {
                    continue;
                }
                let ids: Vec<u32> = visit.codes(channel).iter().map(|c| vocab.id(channel, c)).collect();
                for (r, block) in reshape_channel(&ids, slots).into_iter().take(rows.len()).enumerate() {
                    rows[r][start..start + slots].copy_from_slice(&block);
                }
            }
        }
        col = start + slots;
    }
    for j in 0..m {
        grid.attention_mask[j] = grid.diag_row[j] != PAD;
    }
    Ok(grid)
}

/// Encodes many journeys with one config.
pub fn encode_all(journeys: &[PatientJourney], vocab: &Vocabulary, config: &EncoderConfig) -> Result<Vec<SlotGrid>> {
    journeys.iter().map(|j| encode(j, vocab, config)).collect()
}

/// Independently permutes diagnoses, procedures and labs inside every visit.
pub fn shuffle_within_visits(journey: &PatientJourney, seed: u64) -> PatientJourney {
    let mut rng = ChaCha8Rng::seed_from_u64(patient_key(&journey.patient_id, seed));
    let mut out = journey.clone();
    for v in &mut out.visits {
        for channel in CodeChannel::ALL {
            v.codes_mut(channel).shuffle(&mut rng);
        }
    }
    out
}
