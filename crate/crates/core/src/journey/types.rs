use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Concept channels that carry free-form medical codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeChannel {
    Diagnosis,
    Procedure,
    Lab,
}

impl CodeChannel {
    pub const ALL: [CodeChannel; 3] = [CodeChannel::Diagnosis, CodeChannel::Procedure, CodeChannel::Lab];

    pub fn name(self) -> &'static str {
        match self {
            CodeChannel::Diagnosis => "diagnosis",
            CodeChannel::Procedure => "procedure",
            CodeChannel::Lab => "lab",
        }
    }
}

impl fmt::Display for CodeChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A code tagged with the channel it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConceptCode {
    pub channel: CodeChannel,
    pub code: String,
}

impl ConceptCode {
    pub fn new(channel: CodeChannel, code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.is_empty() {
            return Err(Error::DomainError(format!("empty {channel} code")));
        }
        if channel == CodeChannel::Diagnosis && !is_diagnosis_code(&code) {
            return Err(Error::DomainError(format!(
                "diagnosis code `{code}` is not a letter followed by two alphanumerics"
            )));
        }
        Ok(Self { channel, code })
    }
}

impl fmt::Display for ConceptCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.channel, self.code)
    }
}

/// True for truncated diagnosis codes: one ASCII letter then two ASCII alphanumerics.
pub fn is_diagnosis_code(code: &str) -> bool {
    let b = code.as_bytes();
    b.len() == 3 && b[0].is_ascii_alphabetic() && b[1].is_ascii_alphanumeric() && b[2].is_ascii_alphanumeric()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum Gender {
    M,
    F,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoking {
    Never,
    Former,
    Current,
    Unknown,
}

impl Smoking {
    pub const ALL: [Smoking; 4] = [Smoking::Never, Smoking::Former, Smoking::Current, Smoking::Unknown];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One hospitalisation episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub diagnoses: Vec<String>,
    #[serde(default)]
    pub procedures: Vec<String>,
    #[serde(default)]
    pub labs: Vec<String>,
    pub age: u32,
    #[serde(default)]
    pub bmi: Option<u32>,
    #[serde(default)]
    pub smoking: Option<Smoking>,
    /// Day index; day 0 is 2000-01-01.
    pub date: i64,
    /// Length of stay in days.
    #[serde(default)]
    pub length_of_stay: u32,
}

impl Visit {
    pub fn codes(&self, channel: CodeChannel) -> &[String] {
        match channel {
            CodeChannel::Diagnosis => &self.diagnoses,
            CodeChannel::Procedure => &self.procedures,
            CodeChannel::Lab => &self.labs,
        }
    }

    pub fn codes_mut(&mut self, channel: CodeChannel) -> &mut Vec<String> {
        match channel {
            CodeChannel::Diagnosis => &mut self.diagnoses,
            CodeChannel::Procedure => &mut self.procedures,
            CodeChannel::Lab => &mut self.labs,
        }
    }

    pub fn concepts(&self) -> impl Iterator<Item = ConceptCode> + '_ {
        CodeChannel::ALL.into_iter().flat_map(move |channel| {
            self.codes(channel).iter().map(move |code| ConceptCode {
                channel,
                code: code.clone(),
            })
        })
    }

    pub fn has_diagnosis_prefix(&self, prefix: &str) -> bool {
        self.diagnoses.iter().any(|c| c.starts_with(prefix))
    }
}

/// The unit of ingestion: one patient's ordered visits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientJourney {
    pub patient_id: String,
    #[serde(default)]
    pub gender: Gender,
    pub visits: Vec<Visit>,
    #[serde(default)]
    pub deceased_day: Option<i64>,
}

impl PatientJourney {
    pub fn diagnosis_count(&self) -> usize {
        self.visits.iter().map(|v| v.diagnoses.len()).sum()
    }

    pub fn first_visit_with_prefix(&self, prefix: &str) -> Option<usize> {
        self.visits.iter().position(|v| v.has_diagnosis_prefix(prefix))
    }

    pub fn first_visit_with_code(&self, code: &str) -> Option<usize> {
        self.visits.iter().position(|v| v.diagnoses.iter().any(|c| c == code))
    }

    pub fn has_concept(&self, concept: &ConceptCode) -> bool {
        self.visits
            .iter()
            .any(|v| v.codes(concept.channel).iter().any(|c| *c == concept.code))
    }

    /// Calendar birth year, taking day 0 as 2000-01-01.
    pub fn birth_year(&self) -> Option<i64> {
        let first = self.visits.first()?;
        Some(2000 + first.date.div_euclid(365) - i64::from(first.age))
    }

    /// True if any stay exceeded one week.
    pub fn prolonged_stay(&self) -> bool {
        self.visits.iter().any(|v| v.length_of_stay > 7)
    }
}
