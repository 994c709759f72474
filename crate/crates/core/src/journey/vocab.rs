use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::types::{CodeChannel, PatientJourney};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
/// Number of reserved ids; the first real token of every channel has this id.
pub const RESERVED: u32 = 5;

pub const RESERVED_NAMES: [&str; RESERVED as usize] = ["PAD", "UNK", "CLS", "SEP", "MASK"];

/// Per-channel code ↔ token id bijection. Reserved ids are shared by all channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    diagnosis: Vec<String>,
    procedure: Vec<String>,
    lab: Vec<String>,
    index: Option<Box<Index>>,
}

/// On-disk form: the ordered code lists of each channel.
#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    diagnosis: Vec<String>,
    procedure: Vec<String>,
    lab: Vec<String>,
}

impl From<VocabularyFile> for Vocabulary {
    fn from(f: VocabularyFile) -> Self {
        Vocabulary::from_codes(f.diagnosis, f.procedure, f.lab)
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        VocabularyFile {
            diagnosis: v.diagnosis,
            procedure: v.procedure,
            lab: v.lab,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Index {
    diagnosis: BTreeMap<String, u32>,
    procedure: BTreeMap<String, u32>,
    lab: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Every code observed in `journeys` gets an id; codes are ordered lexicographically.
    pub fn build(journeys: &[PatientJourney]) -> Self {
        let mut sets: [BTreeSet<&str>; 3] = Default::default();
        for j in journeys {
            for v in &j.visits {
                for (i, channel) in CodeChannel::ALL.into_iter().enumerate() {
                    sets[i].extend(v.codes(channel).iter().map(String::as_str));
                }
            }
        }
        let [d, p, l] = sets.map(|s| s.into_iter().map(str::to_owned).collect::<Vec<_>>());
        Self::from_codes(d, p, l)
    }

    pub fn from_codes(diagnosis: Vec<String>, procedure: Vec<String>, lab: Vec<String>) -> Self {
        let mut vocab = Self {
            diagnosis,
            procedure,
            lab,
            index: None,
        };
        vocab.reindex();
        vocab
    }

    fn reindex(&mut self) {
        let map = |codes: &[String]| {
            codes
                .iter()
                .enumerate()
                .map(|(i, c)| (c.clone(), RESERVED + i as u32))
                .collect::<BTreeMap<_, _>>()
        };
        self.index = Some(Box::new(Index {
            diagnosis: map(&self.diagnosis),
            procedure: map(&self.procedure),
            lab: map(&self.lab),
        }));
    }

    fn index(&self) -> &Index {
        self.index.as_deref().expect("vocabulary index built on construction")
    }

    pub fn codes(&self, channel: CodeChannel) -> &[String] {
        match channel {
            CodeChannel::Diagnosis => &self.diagnosis,
            CodeChannel::Procedure => &self.procedure,
            CodeChannel::Lab => &self.lab,
        }
    }

    /// Table size including reserved ids.
    pub fn size(&self, channel: CodeChannel) -> usize {
        RESERVED as usize + self.codes(channel).len()
    }

    /// Token id for a code, UNK when the code was never seen.
    pub fn id(&self, channel: CodeChannel, code: &str) -> u32 {
        let index = self.index();
        let map = match channel {
            CodeChannel::Diagnosis => &index.diagnosis,
            CodeChannel::Procedure => &index.procedure,
            CodeChannel::Lab => &index.lab,
        };
        map.get(code).copied().unwrap_or(UNK)
    }

    pub fn code(&self, channel: CodeChannel, id: u32) -> Option<&str> {
        id.checked_sub(RESERVED)
            .and_then(|i| self.codes(channel).get(i as usize))
            .map(String::as_str)
    }

    /// Human-readable label for any token id of a code channel.
    pub fn label(&self, channel: CodeChannel, id: u32) -> String {
        if id < RESERVED {
            RESERVED_NAMES[id as usize].to_string()
        } else {
            self.code(channel, id).unwrap_or("?").to_string()
        }
    }

    /// Real (non-reserved) diagnosis ids.
    pub fn diagnosis_ids(&self) -> std::ops::Range<u32> {
        RESERVED..RESERVED + self.diagnosis.len() as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::journey::types::{Gender, Visit};

    fn corpus() -> Vec<PatientJourney> {
        let v = |d: &[&str]| Visit {
            diagnoses: d.iter().map(|s| s.to_string()).collect(),
            procedures: vec!["P1".into()],
            labs: vec![],
            age: 40,
            bmi: None,
            smoking: None,
            date: 0,
            length_of_stay: 0,
        };
        vec![PatientJourney {
            patient_id: "a".into(),
            gender: Gender::M,
            visits: vec![v(&["I10", "E11"]), v(&["C34", "I10"])],
            deceased_day: None,
        }]
    }

    #[test]
    fn sizes_include_reserved() {
        let vocab = Vocabulary::build(&corpus());
        assert_eq!(vocab.size(CodeChannel::Diagnosis), 3 + RESERVED as usize);
        assert_eq!(vocab.size(CodeChannel::Lab), RESERVED as usize);
    }

    #[test]
    fn deterministic_and_bijective() {
        let a = Vocabulary::build(&corpus());
        let b = Vocabulary::build(&corpus());
        assert_eq!(a, b);
        for id in a.diagnosis_ids() {
            let code = a.code(CodeChannel::Diagnosis, id).unwrap();
            assert_eq!(a.id(CodeChannel::Diagnosis, code), id);
        }
    }

    #[test]
    fn unseen_code_is_unk() {
        let vocab = Vocabulary::build(&corpus());
        assert_eq!(vocab.id(CodeChannel::Diagnosis, "Z99"), UNK);
    }

    #[test]
    fn json_round_trip_restores_index() {
        let vocab = Vocabulary::build(&corpus());
        let text = serde_json::to_string(&vocab).unwrap();
        let back: Vocabulary = serde_json::from_str(&text).unwrap();
        assert_eq!(back.id(CodeChannel::Diagnosis, "I10"), vocab.id(CodeChannel::Diagnosis, "I10"));
    }
}
