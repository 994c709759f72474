use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::density::NOISE;
use super::reduce::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::journey::{CodeChannel, ConceptCode, Gender, PatientJourney};

/// Minimum margin of in-cluster over cohort frequency for a concept to be listed.
pub const FREQUENCY_MARGIN: f64 = 0.05;
pub const TOP_CONCEPTS: usize = 3;
pub const CANCER_PREFIX: &str = "C";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientAssignment {
    pub patient_id: String,
    pub cluster: i64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptFrequency {
    pub code: String,
    pub in_cluster: f64,
    pub cohort: f64,
}

/// Median over the patients that have the value; `None` if nobody has it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtypeStats {
    pub patients: usize,
    /// Age at the last visit.
    pub median_age: Option<f64>,
    pub median_birth_year: Option<f64>,
    /// Last recorded BMI bucket.
    pub median_bmi: Option<f64>,
    pub male_fraction: f64,
    pub death_rate: f64,
    /// Mean over cancer patients with a journey longer than one day.
    pub cancer_journey_fraction: Option<f64>,
    /// Share of cancer patients with two or more visits after their last cancer visit.
    pub cancer_free_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: i64,
    pub size: usize,
    /// Most carried concept over all channels.
    pub modal_concept: ConceptCode,
    pub concept_in_cluster: f64,
    pub concept_purity: f64,
    /// Most carried diagnosis; basis of `in_cluster` and `purity`.
    pub modal_diagnosis: Option<String>,
    pub in_cluster: f64,
    pub purity: f64,
    pub top: BTreeMap<CodeChannel, Vec<ConceptFrequency>>,
    pub stats: SubtypeStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub patients: Vec<PatientAssignment>,
    pub noise: usize,
    pub clusters: Vec<ClusterSummary>,
}

impl ClusterReport {
    pub fn clustered(&self) -> usize {
        self.patients.len() - self.noise
    }

    pub fn cluster(&self, id: i64) -> Option<&ClusterSummary> {
        self.clusters.iter().find(|c| c.cluster == id)
    }

    pub fn members(&self, id: i64) -> Vec<usize> {
        (0..self.patients.len()).filter(|&i| self.patients[i].cluster == id).collect()
    }

    /// Rows of cluster, patients, most occurring code, in-cluster and purity.
    pub fn table_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["cluster", "patients", "most_occurring_code", "in_cluster", "purity", "modal_concept", "concept_in_cluster", "concept_purity"])?;
        for c in &self.clusters {
            w.write_record([
                c.cluster.to_string(),
                c.size.to_string(),
                c.modal_diagnosis.clone().unwrap_or_default(),
                format!("{:.4}", c.in_cluster),
                format!("{:.4}", c.purity),
                c.modal_concept.to_string(),
                format!("{:.4}", c.concept_in_cluster),
                format!("{:.4}", c.concept_purity),
            ])?;
        }
        finish(w)
    }

    /// One row of subtype statistics per cluster.
    pub fn stats_csv(&self) -> Result<String> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "cluster",
            "patients",
            "median_age",
            "median_birth_year",
            "median_bmi",
            "male",
            "death_rate",
            "journey_with_cancer",
            "cancer_free",
            "top_diagnoses",
            "top_procedures",
            "top_labs",
        ])?;
        for c in &self.clusters {
            let s = &c.stats;
            let top = |ch| {
                c.top.get(&ch).map_or(String::new(), |v: &Vec<ConceptFrequency>| {
                    v.iter().map(|f| f.code.as_str()).collect::<Vec<_>>().join(" ")
                })
            };
            w.write_record([
                c.cluster.to_string(),
                s.patients.to_string(),
                opt(s.median_age),
                opt(s.median_birth_year),
                opt(s.median_bmi),
                format!("{:.4}", s.male_fraction),
                format!("{:.4}", s.death_rate),
                opt(s.cancer_journey_fraction),
                opt(s.cancer_free_fraction),
                top(CodeChannel::Diagnosis),
                top(CodeChannel::Procedure),
                top(CodeChannel::Lab),
            ])?;
        }
        finish(w)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

fn is_cancer_visit(v: &crate::journey::Visit) -> bool {
    v.has_diagnosis_prefix(CANCER_PREFIX)
}

/// Fraction of the journey between the first and last cancer diagnosis.
pub fn cancer_journey_fraction(j: &PatientJourney) -> Option<f64> {
    let first = j.visits.iter().position(is_cancer_visit)?;
    let last = j.visits.iter().rposition(is_cancer_visit)?;
    let span = j.visits.last()?.date - j.visits.first()?.date;
    (span > 0).then(|| (j.visits[last].date - j.visits[first].date) as f64 / span as f64)
}

/// Whether at least two visits follow the last cancer visit; `None` without cancer.
pub fn cancer_free(j: &PatientJourney) -> Option<bool> {
    let last = j.visits.iter().rposition(is_cancer_visit)?;
    Some(j.visits.len() - last - 1 >= 2)
}

pub fn subtype_stats(members: &[&PatientJourney]) -> SubtypeStats {
    let n = members.len();
    let mut ages: Vec<f64> = members.iter().filter_map(|j| j.visits.last()).map(|v| f64::from(v.age)).collect();
    let mut years: Vec<f64> = members.iter().filter_map(|j| j.birth_year()).map(|y| y as f64).collect();
    let mut bmi: Vec<f64> = members
        .iter()
        .filter_map(|j| j.visits.iter().rev().find_map(|v| v.bmi))
        .map(f64::from)
        .collect();
    let fractions: Vec<f64> = members.iter().filter_map(|j| cancer_journey_fraction(j)).collect();
    let free: Vec<bool> = members.iter().filter_map(|j| cancer_free(j)).collect();
    let share = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    SubtypeStats {
        patients: n,
        median_age: median(&mut ages),
        median_birth_year: median(&mut years),
        median_bmi: median(&mut bmi),
        male_fraction: share(members.iter().filter(|j| j.gender == Gender::M).count()),
        death_rate: share(members.iter().filter(|j| j.deceased_day.is_some()).count()),
        cancer_journey_fraction: (!fractions.is_empty())
            .then(|| fractions.iter().sum::<f64>() / fractions.len() as f64),
        cancer_free_fraction: (!free.is_empty())
            .then(|| free.iter().filter(|&&b| b).count() as f64 / free.len() as f64),
    }
}

fn concept_set(j: &PatientJourney) -> BTreeSet<ConceptCode> {
    j.visits.iter().flat_map(|v| v.concepts()).collect()
}

fn modal<'a>(counts: impl Iterator<Item = (&'a ConceptCode, &'a usize)>) -> Option<&'a ConceptCode> {
    // highest count, then the smallest concept
    counts
        .fold(None, |best: Option<(&ConceptCode, usize)>, (c, &n)| match best {
            Some((_, b)) if b >= n => best,
            _ => Some((c, n)),
        })
        .map(|x| x.0)
}

/// Per-cluster analytics; `coords` supplies the 2D position of every patient.
pub fn cluster_analytics(
    assignments: &[i64],
    journeys: &[PatientJourney],
    coords: Option<&EmbeddingMatrix>,
) -> Result<ClusterReport> {
    let n = journeys.len();
    if assignments.len() != n {
        return Err(Error::ShapeMismatch(format!("{} assignments for {n} patients", assignments.len())));
    }
    if let Some(c) = coords {
        if c.rows() != n || c.cols < 2 {
            return Err(Error::ShapeMismatch(format!("coordinates are {}×{}, need {n}×2", c.rows(), c.cols)));
        }
    }
    let sets: Vec<BTreeSet<ConceptCode>> = journeys.iter().map(concept_set).collect();
    let mut cohort: BTreeMap<&ConceptCode, usize> = BTreeMap::new();
    for s in &sets {
        for c in s {
            *cohort.entry(c).or_default() += 1;
        }
    }
    let ids: BTreeSet<i64> = assignments.iter().copied().filter(|&a| a != NOISE).collect();
    let mut clusters = Vec::with_capacity(ids.len());
    for id in ids {
        let members: Vec<usize> = (0..n).filter(|&i| assignments[i] == id).collect();
        let size = members.len();
        let mut counts: BTreeMap<&ConceptCode, usize> = BTreeMap::new();
        for &i in &members {
            for c in &sets[i] {
                *counts.entry(c).or_default() += 1;
            }
        }
        let concept = modal(counts.iter().map(|(c, n)| (*c, n)));
        let diagnosis = modal(counts.iter().filter(|(c, _)| c.channel == CodeChannel::Diagnosis).map(|(c, n)| (*c, n)));
        let fraction = |c: Option<&ConceptCode>| {
            c.map_or((0.0, 0.0), |c| {
                let k = counts[c] as f64;
                (k / size as f64, k / cohort[c] as f64)
            })
        };
        let (concept_in_cluster, concept_purity) = fraction(concept);
        let (in_cluster, purity) = fraction(diagnosis);

        let mut top: BTreeMap<CodeChannel, Vec<ConceptFrequency>> = BTreeMap::new();
        for channel in CodeChannel::ALL {
            let mut listed: Vec<ConceptFrequency> = counts
                .iter()
                .filter(|(c, _)| c.channel == channel)
                .map(|(c, &k)| ConceptFrequency {
                    code: c.code.clone(),
                    in_cluster: k as f64 / size as f64,
                    cohort: cohort[*c] as f64 / n as f64,
                })
                .filter(|f| f.in_cluster - f.cohort >= FREQUENCY_MARGIN - 1e-12)
                .collect();
            listed.sort_by(|a, b| b.in_cluster.total_cmp(&a.in_cluster).then_with(|| a.code.cmp(&b.code)));
            listed.truncate(TOP_CONCEPTS);
            top.insert(channel, listed);
        }

        let member_refs: Vec<&PatientJourney> = members.iter().map(|&i| &journeys[i]).collect();
        clusters.push(ClusterSummary {
            cluster: id,
            size,
            modal_concept: concept.cloned().unwrap_or(ConceptCode {
                channel: CodeChannel::Diagnosis,
                code: String::new(),
            }),
            concept_in_cluster,
            concept_purity,
            modal_diagnosis: diagnosis.map(|c| c.code.clone()),
            in_cluster,
            purity,
            top,
            stats: subtype_stats(&member_refs),
        });
    }
    let patients = journeys
        .iter()
        .enumerate()
        .map(|(i, j)| {
            let (x, y) = coords.map_or((0.0, 0.0), |c| (c.row(i)[0], c.row(i)[1]));
            PatientAssignment {
                patient_id: j.patient_id.clone(),
                cluster: assignments[i],
                x,
                y,
            }
        })
        .collect();
    Ok(ClusterReport {
        patients,
        noise: assignments.iter().filter(|&&a| a == NOISE).count(),
        clusters,
    })
}
