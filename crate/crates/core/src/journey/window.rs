use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::types::PatientJourney;
use crate::error::Error;

/// Observation window applied to a journey before fine-tuning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskWindow {
    /// The whole journey.
    Full,
    /// All visits up to and including the first visit with a diagnosis starting with `prefix`.
    ToFirstCodeInclusive { prefix: String },
    /// Visits within 365 days before the first visit with `code`, that visit included.
    OneYearBefore { code: String },
}

impl TaskWindow {
    /// Cuts a journey to the window, `None` when the index event never happens.
    pub fn apply(&self, journey: &PatientJourney) -> Option<PatientJourney> {
        let visits = match self {
            TaskWindow::Full => journey.visits.clone(),
            TaskWindow::ToFirstCodeInclusive { prefix } => {
                let idx = journey.first_visit_with_prefix(prefix)?;
                journey.visits[..=idx].to_vec()
            }
            TaskWindow::OneYearBefore { code } => {
                let idx = journey.first_visit_with_code(code)?;
                let end = journey.visits[idx].date;
                journey.visits[..=idx].iter().filter(|v| v.date >= end - 365).cloned().collect()
            }
        };
        Some(PatientJourney {
            patient_id: journey.patient_id.clone(),
            gender: journey.gender,
            visits,
            deceased_day: journey.deceased_day,
        })
    }
}

impl fmt::Display for TaskWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskWindow::Full => f.write_str("full"),
            TaskWindow::ToFirstCodeInclusive { prefix } => write!(f, "to_first:{prefix}"),
            TaskWindow::OneYearBefore { code } => write!(f, "year_before:{code}"),
        }
    }
}

impl FromStr for TaskWindow {
    type Err = Error;

    /// Parses `full`, `to_first:<prefix>` or `year_before:<code>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::Usage {
            key: "window".into(),
            message: format!("expected full, to_first:<prefix> or year_before:<code>, got `{s}`"),
        };
        match s.split_once(':') {
            None if s == "full" => Ok(TaskWindow::Full),
            Some(("to_first", p)) if !p.is_empty() => Ok(TaskWindow::ToFirstCodeInclusive { prefix: p.into() }),
            Some(("year_before", c)) if !c.is_empty() => Ok(TaskWindow::OneYearBefore { code: c.into() }),
            _ => Err(bad()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::journey::types::{Gender, Visit};

    fn journey() -> PatientJourney {
        let v = |date: i64, d: &str| Visit {
            diagnoses: vec![d.into()],
            procedures: vec![],
            labs: vec![],
            age: 60,
            bmi: None,
            smoking: None,
            date,
            length_of_stay: 1,
        };
        PatientJourney {
            patient_id: "x".into(),
            gender: Gender::M,
            visits: vec![v(0, "I10"), v(100, "I50"), v(500, "E11"), v(700, "I50"), v(800, "C34"), v(900, "C34")],
            deceased_day: None,
        }
    }

    #[test]
    fn to_first_code_keeps_index_visit() {
        let w = TaskWindow::ToFirstCodeInclusive { prefix: "C".into() }.apply(&journey()).unwrap();
        assert_eq!(w.visits.len(), 5);
        assert!(w.visits.last().unwrap().has_diagnosis_prefix("C"));
    }

    #[test]
    fn one_year_before_first_event() {
        let w = TaskWindow::OneYearBefore { code: "I50".into() }.apply(&journey()).unwrap();
        let dates: Vec<i64> = w.visits.iter().map(|v| v.date).collect();
        assert_eq!(dates, vec![0, 100]);
    }

    #[test]
    fn missing_index_event() {
        assert!(TaskWindow::ToFirstCodeInclusive { prefix: "Z".into() }.apply(&journey()).is_none());
    }

    #[test]
    fn parse_round_trip() {
        for w in ["full", "to_first:C", "year_before:I50"] {
            assert_eq!(w.parse::<TaskWindow>().unwrap().to_string(), w);
        }
        assert!("to_first:".parse::<TaskWindow>().is_err());
    }
}
