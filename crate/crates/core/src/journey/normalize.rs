//! Data-processing rules applied before encoding.

use super::types::{is_diagnosis_code, CodeChannel, PatientJourney, Smoking, Visit};
use crate::error::{Error, Result};

/// Patients with more diagnoses than this (after de-duplication) are discarded.
pub const MAX_DIAGNOSES: usize = 128;

/// Minimum number of visits for the pre-training cohort.
pub const MIN_PRETRAIN_VISITS: usize = 5;

/// Truncates a raw diagnosis code to its three-character category, ignoring dots.
pub fn truncate_diagnosis(raw: &str) -> Option<String> {
    let code: String = raw.trim().chars().filter(|c| *c != '.').take(3).collect::<String>().to_ascii_uppercase();
    is_diagnosis_code(&code).then_some(code)
}

fn dedup_preserving_order(codes: &mut Vec<String>) {
    let mut seen = std::collections::HashSet::with_capacity(codes.len());
    codes.retain(|c| seen.insert(c.clone()));
}

/// Applies truncation, per-visit de-duplication, carry-forward of BMI and
/// smoking, and the diagnosis-count cap.
///
/// Visits are ordered by date; visits sharing a date are merged. Visits left
/// without a valid diagnosis are dropped.
pub fn normalize_journey(raw: &PatientJourney) -> Result<PatientJourney> {
    let reject = |reason: String| Error::RejectedJourney {
        patient_id: raw.patient_id.clone(),
        reason,
    };
    if raw.visits.is_empty() {
        return Err(reject("journey has no visits".into()));
    }

    let mut visits: Vec<Visit> = raw.visits.clone();
    visits.sort_by_key(|v| v.date);

    let mut merged: Vec<Visit> = Vec::with_capacity(visits.len());
    for mut visit in visits {
        visit.diagnoses = visit.diagnoses.iter().filter_map(|c| truncate_diagnosis(c)).collect();
        for channel in [CodeChannel::Procedure, CodeChannel::Lab] {
            visit.codes_mut(channel).retain(|c| !c.trim().is_empty());
        }
        match merged.last_mut() {
            Some(prev) if prev.date == visit.date => {
                for channel in CodeChannel::ALL {
                    let extra = std::mem::take(visit.codes_mut(channel));
                    prev.codes_mut(channel).extend(extra);
                }
                prev.bmi = prev.bmi.or(visit.bmi);
                prev.smoking = prev.smoking.or(visit.smoking);
                prev.length_of_stay = prev.length_of_stay.max(visit.length_of_stay);
            }
            _ => merged.push(visit),
        }
    }

    for visit in &mut merged {
        for channel in CodeChannel::ALL {
            dedup_preserving_order(visit.codes_mut(channel));
        }
    }
    merged.retain(|v| !v.diagnoses.is_empty());
    if merged.is_empty() {
        return Err(reject("no visit with a valid diagnosis".into()));
    }

    let mut last_bmi = None;
    let mut last_smoking = None;
    for visit in &mut merged {
        match visit.bmi {
            Some(b) => last_bmi = Some(b),
            None => visit.bmi = last_bmi,
        }
        match visit.smoking {
            Some(s) if s != Smoking::Unknown => last_smoking = Some(s),
            _ => visit.smoking = Some(last_smoking.unwrap_or(Smoking::Unknown)),
        }
    }

    let journey = PatientJourney {
        patient_id: raw.patient_id.clone(),
        gender: raw.gender,
        visits: merged,
        deceased_day: raw.deceased_day,
    };
    let total = journey.diagnosis_count();
    if total > MAX_DIAGNOSES {
        return Err(reject(format!("{total} diagnoses exceed the cap of {MAX_DIAGNOSES}")));
    }
    Ok(journey)
}

/// Normalizes every journey, keeping the ones that pass and counting rejections.
pub fn normalize_all(raw: &[PatientJourney]) -> (Vec<PatientJourney>, usize) {
    let mut rejected = 0;
    let kept = raw
        .iter()
        .filter_map(|j| match normalize_journey(j) {
            Ok(j) => Some(j),
            Err(_) => {
                rejected += 1;
                None
            }
        })
        .collect();
    (kept, rejected)
}

/// Keeps journeys with at least five visits that each carry a diagnosis.
pub fn filter_pretrain_cohort(journeys: Vec<PatientJourney>) -> Vec<PatientJourney> {
    journeys
        .into_iter()
        .filter(|j| j.visits.iter().filter(|v| !v.diagnoses.is_empty()).count() >= MIN_PRETRAIN_VISITS)
        .collect()
}
