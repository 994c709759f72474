//! Seeded synthetic cohorts with planted structure.
//!
//! Every patient is drawn from one archetype. An archetype fixes categorical
//! code distributions for each channel, demographic distributions, an
//! optional signature diagnosis (the planted "cancer" code) and logistic
//! outcome weights. Outcomes are planted into the records themselves
//! (death day, readmission gap, length of stay) so that every label can be
//! recomputed from the journey by its [`LabelRule`].
//!
//! Randomness comes from a single `ChaCha8Rng` seeded with the 64-bit
//! cohort seed, so a spec and seed fully determine the output.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::types::{is_diagnosis_code, CodeChannel, Gender, PatientJourney, Smoking, Visit};
use super::window::TaskWindow;
use crate::error::{Error, Result};

pub const HEART_FAILURE: &str = "I50";
pub const CANCER_PREFIX: &str = "C";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedCode {
    pub code: String,
    pub p: f64,
}

/// Logistic outcome rule: `intercept + age_per_decade·(age−60)/10 + current_smoker·[smoker] + male·[male]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LogitWeights {
    pub intercept: f64,
    #[serde(default)]
    pub age_per_decade: f64,
    #[serde(default)]
    pub current_smoker: f64,
    #[serde(default)]
    pub male: f64,
}

impl LogitWeights {
    pub fn logit(&self, age: u32, smoker: bool, male: bool) -> f64 {
        self.intercept
            + self.age_per_decade * (f64::from(age) - 60.0) / 10.0
            + if smoker { self.current_smoker } else { 0.0 }
            + if male { self.male } else { 0.0 }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub name: String,
    /// Archetypes sharing a group form one planted cluster (a mixture of variants).
    #[serde(default)]
    pub group: Option<String>,
    pub weight: f64,
    pub diagnoses: Vec<WeightedCode>,
    #[serde(default)]
    pub procedures: Vec<WeightedCode>,
    #[serde(default)]
    pub labs: Vec<WeightedCode>,
    /// Planted index diagnosis; first appears at a visit in the second half of the journey.
    #[serde(default)]
    pub signature: Option<String>,
    /// Probability the signature recurs at each later visit.
    #[serde(default)]
    pub signature_recur: f64,
    #[serde(default)]
    pub heart_failure_prob: f64,
    pub diagnoses_per_visit: [usize; 2],
    #[serde(default)]
    pub procedures_per_visit: [usize; 2],
    #[serde(default)]
    pub labs_per_visit: [usize; 2],
    pub age_mean: f64,
    pub age_sd: f64,
    pub male_prob: f64,
    pub bmi_mean: f64,
    pub bmi_sd: f64,
    /// Probability that a patient never has a BMI recorded.
    pub bmi_missing: f64,
    /// Never / former / current.
    pub smoking: [f64; 3],
    pub smoking_missing: f64,
    /// Per-visit probability of a stay longer than a week.
    pub long_stay_prob: f64,
    #[serde(default)]
    pub mortality: LogitWeights,
    #[serde(default)]
    pub readmission: LogitWeights,
}

/// How a label table is derived from journeys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelRule {
    /// Death within `horizon_days` after the first cancer-coded visit.
    Death { task: String, horizon_days: i64 },
    /// A further visit within `horizon_days` after the first heart-failure visit.
    Readmission { task: String, horizon_days: i64 },
    /// Any stay longer than one week.
    ProlongedStay { task: String },
    /// Presence of `code` on `channel` inside the observation window.
    CodePresence {
        task: String,
        channel: CodeChannel,
        code: String,
        window: TaskWindow,
    },
}

impl LabelRule {
    pub fn task(&self) -> &str {
        match self {
            LabelRule::Death { task, .. }
            | LabelRule::Readmission { task, .. }
            | LabelRule::ProlongedStay { task }
            | LabelRule::CodePresence { task, .. } => task,
        }
    }

    /// Observation window the task is meant to be fine-tuned on.
    pub fn window(&self) -> TaskWindow {
        match self {
            LabelRule::Death { .. } => TaskWindow::ToFirstCodeInclusive {
                prefix: CANCER_PREFIX.into(),
            },
            LabelRule::Readmission { .. } => TaskWindow::OneYearBefore {
                code: HEART_FAILURE.into(),
            },
            LabelRule::ProlongedStay { .. } => TaskWindow::Full,
            LabelRule::CodePresence { window, .. } => window.clone(),
        }
    }

    /// Label of one journey; `None` when the patient is not eligible.
    pub fn label(&self, journey: &PatientJourney) -> Option<bool> {
        match self {
            LabelRule::Death { horizon_days, .. } => {
                let idx = journey.first_visit_with_prefix(CANCER_PREFIX)?;
                let anchor = journey.visits[idx].date;
                Some(journey.deceased_day.is_some_and(|d| d - anchor <= *horizon_days))
            }
            LabelRule::Readmission { horizon_days, .. } => {
                let idx = journey.first_visit_with_code(HEART_FAILURE)?;
                let anchor = journey.visits[idx].date;
                Some(journey.visits.get(idx + 1).is_some_and(|v| v.date - anchor <= *horizon_days))
            }
            LabelRule::ProlongedStay { .. } => Some(journey.prolonged_stay()),
            LabelRule::CodePresence {
                channel, code, window, ..
            } => {
                let w = window.apply(journey)?;
                Some(w.visits.iter().any(|v| v.codes(*channel).iter().any(|c| c == code)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub patient_count: usize,
    pub seed: u64,
    pub min_visits: usize,
    pub max_visits: usize,
    /// Share of patients planted with fewer than `min_visits` visits.
    #[serde(default)]
    pub short_journey_fraction: f64,
    pub archetypes: Vec<Archetype>,
    #[serde(default)]
    pub tasks: Vec<LabelRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelRow {
    pub patient_id: String,
    pub task: String,
    pub label: u8,
}

/// Ground-truth archetype of a generated patient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub patient_id: String,
    pub archetype: String,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub journeys: Vec<PatientJourney>,
    pub labels: Vec<LabelRow>,
    pub truth: Vec<PatientTruth>,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.archetypes.is_empty() {
            return bad("no archetypes".into());
        }
        if self.min_visits == 0 || self.max_visits < self.min_visits {
            return bad(format!("visit range {}..={} is empty", self.min_visits, self.max_visits));
        }
        if !(0.0..=1.0).contains(&self.short_journey_fraction) {
            return bad("short_journey_fraction outside [0, 1]".into());
        }
        if self.short_journey_fraction > 0.0 && self.min_visits < 3 {
            return bad("short journeys need min_visits >= 3".into());
        }
        let mut tasks = BTreeSet::new();
        for t in &self.tasks {
            if !tasks.insert(t.task()) {
                return bad(format!("duplicate task `{}`", t.task()));
            }
        }
        for a in &self.archetypes {
            let ctx = |m: &str| format!("archetype `{}`: {m}", a.name);
            if !(a.weight.is_finite() && a.weight > 0.0) {
                return bad(ctx("weight must be positive"));
            }
            for (name, dist, range) in [
                ("diagnoses", &a.diagnoses, a.diagnoses_per_visit),
                ("procedures", &a.procedures, a.procedures_per_visit),
                ("labs", &a.labs, a.labs_per_visit),
            ] {
                if range[0] > range[1] {
                    return bad(ctx(&format!("{name} per-visit range is empty")));
                }
                if dist.is_empty() {
                    if range[1] > 0 {
                        return bad(ctx(&format!("{name} distribution is empty")));
                    }
                    continue;
                }
                if dist.iter().any(|w| !(w.p.is_finite() && w.p >= 0.0) || w.code.is_empty()) {
                    return bad(ctx(&format!("{name} has a negative, non-finite or empty entry")));
                }
                let sum: f64 = dist.iter().map(|w| w.p).sum();
                if (sum - 1.0).abs() > 1e-6 {
                    return bad(ctx(&format!("{name} probabilities sum to {sum}, not 1")));
                }
            }
            if a.diagnoses_per_visit[0] == 0 {
                return bad(ctx("every visit needs at least one diagnosis"));
            }
            if let Some(bad_code) = a.diagnoses.iter().map(|w| &w.code).chain(&a.signature).find(|c| !is_diagnosis_code(c)) {
                return bad(ctx(&format!("`{bad_code}` is not a 3-character diagnosis code")));
            }
            let smoking_sum: f64 = a.smoking.iter().sum();
            if a.smoking.iter().any(|p| *p < 0.0) || (smoking_sum - 1.0).abs() > 1e-6 {
                return bad(ctx("smoking probabilities must sum to 1"));
            }
            for (name, p) in [
                ("signature_recur", a.signature_recur),
                ("heart_failure_prob", a.heart_failure_prob),
                ("male_prob", a.male_prob),
                ("bmi_missing", a.bmi_missing),
                ("smoking_missing", a.smoking_missing),
                ("long_stay_prob", a.long_stay_prob),
            ] {
                if !(0.0..=1.0).contains(&p) {
                    return bad(ctx(&format!("{name} outside [0, 1]")));
                }
            }
            if !(a.age_sd >= 0.0 && a.bmi_sd >= 0.0) {
                return bad(ctx("standard deviations must be non-negative"));
            }
        }
        Ok(())
    }
}

fn draw_codes(rng: &mut ChaCha8Rng, dist: &[WeightedCode], sampler: &Option<WeightedIndex<f64>>, range: [usize; 2]) -> Vec<String> {
    let Some(sampler) = sampler else {
        return Vec::new();
    };
    let n = rng.random_range(range[0]..=range[1]);
    let mut out: Vec<String> = Vec::with_capacity(n);
    for _ in 0..n {
        let code = &dist[sampler.sample(rng)].code;
        if !out.contains(code) {
            out.push(code.clone());
        }
    }
    out
}

struct Samplers {
    diagnoses: Option<WeightedIndex<f64>>,
    procedures: Option<WeightedIndex<f64>>,
    labs: Option<WeightedIndex<f64>>,
    smoking: WeightedIndex<f64>,
}

fn sampler(dist: &[WeightedCode]) -> Result<Option<WeightedIndex<f64>>> {
    if dist.is_empty() {
        return Ok(None);
    }
    WeightedIndex::new(dist.iter().map(|w| w.p))
        .map(Some)
        .map_err(|e| Error::InvalidSpec(e.to_string()))
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("validated sd").sample(rng)
}

/// Generates journeys, label tables and ground truth for a cohort spec.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let archetype_pick = WeightedIndex::new(spec.archetypes.iter().map(|a| a.weight)).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let samplers: Vec<Samplers> = spec
        .archetypes
        .iter()
        .map(|a| {
            Ok(Samplers {
                diagnoses: sampler(&a.diagnoses)?,
                procedures: sampler(&a.procedures)?,
                labs: sampler(&a.labs)?,
                smoking: WeightedIndex::new(a.smoking).map_err(|e| Error::InvalidSpec(e.to_string()))?,
            })
        })
        .collect::<Result<_>>()?;

    let width = spec.patient_count.to_string().len().max(5);
    let mut journeys = Vec::with_capacity(spec.patient_count);
    let mut truth = Vec::with_capacity(spec.patient_count);
    for index in 0..spec.patient_count {
        let a_idx = archetype_pick.sample(&mut rng);
        let archetype = &spec.archetypes[a_idx];
        let patient_id = format!("P{index:0width$}");
        let journey = generate_patient(&mut rng, spec, archetype, &samplers[a_idx], patient_id.clone());
        truth.push(PatientTruth {
            patient_id,
            archetype: archetype.name.clone(),
            group: archetype.group.clone().unwrap_or_else(|| archetype.name.clone()),
        });
        journeys.push(journey);
    }

    let mut labels = Vec::new();
    for rule in &spec.tasks {
        for j in &journeys {
            if let Some(l) = rule.label(j) {
                labels.push(LabelRow {
                    patient_id: j.patient_id.clone(),
                    task: rule.task().to_string(),
                    label: u8::from(l),
                });
            }
        }
    }
    Ok(Cohort { journeys, labels, truth })
}

fn generate_patient(rng: &mut ChaCha8Rng, spec: &CohortSpec, a: &Archetype, s: &Samplers, patient_id: String) -> PatientJourney {
    let n_visits = if rng.random_bool(spec.short_journey_fraction) {
        rng.random_range(2..spec.min_visits)
    } else {
        rng.random_range(spec.min_visits..=spec.max_visits)
    };
    let male = rng.random_bool(a.male_prob);
    let gender = if male { Gender::M } else { Gender::F };
    let age0 = normal(rng, a.age_mean, a.age_sd).round().clamp(0.0, 95.0) as u32;
    let bmi_base = (!rng.random_bool(a.bmi_missing)).then(|| normal(rng, a.bmi_mean, a.bmi_sd).clamp(12.0, 55.0));
    let smoking_status = (!rng.random_bool(a.smoking_missing)).then(|| [Smoking::Never, Smoking::Former, Smoking::Current][s.smoking.sample(rng)]);

    let onset = a.signature.as_ref().map(|_| rng.random_range(n_visits / 3..n_visits));
    let hf_visit = (n_visits >= 2 && rng.random_bool(a.heart_failure_prob)).then(|| rng.random_range(0..n_visits - 1));

    let start = rng.random_range(0..3650i64);
    let mut date = start;
    let mut visits = Vec::with_capacity(n_visits);
    for i in 0..n_visits {
        if i > 0 {
            let gap = match hf_visit {
                Some(h) if h + 1 == i => {
                    // readmission outcome from the archetype's logistic rule
                    let prev: &Visit = &visits[i - 1];
                    let smoker = prev.smoking == Some(Smoking::Current);
                    let p = sigmoid(a.readmission.logit(prev.age, smoker, male));
                    if rng.random_bool(p) {
                        rng.random_range(2..=30)
                    } else {
                        rng.random_range(31..=180)
                    }
                }
                _ => rng.random_range(7..=180),
            };
            date += gap;
        }
        let age = age0 + ((date - start) / 365) as u32;

        let mut diagnoses = draw_codes(rng, &a.diagnoses, &s.diagnoses, a.diagnoses_per_visit);
        if let (Some(sig), Some(on)) = (&a.signature, onset) {
            if (i == on || (i > on && rng.random_bool(a.signature_recur))) && !diagnoses.contains(sig) {
                let at = rng.random_range(0..=diagnoses.len());
                diagnoses.insert(at, sig.clone());
            }
        }
        if hf_visit == Some(i) && !diagnoses.iter().any(|d| d == HEART_FAILURE) {
            diagnoses.push(HEART_FAILURE.into());
        }
        let procedures = draw_codes(rng, &a.procedures, &s.procedures, a.procedures_per_visit);
        let labs = draw_codes(rng, &a.labs, &s.labs, a.labs_per_visit);
        let bmi = bmi_base
            .filter(|_| rng.random_bool(0.6))
            .map(|b| (b + rng.random_range(-1.0..=1.0)).round() as u32);
        let smoking = smoking_status.filter(|_| rng.random_bool(0.5));
        let length_of_stay = if rng.random_bool(a.long_stay_prob) {
            rng.random_range(8..=20)
        } else {
            rng.random_range(1..=7)
        };
        visits.push(Visit {
            diagnoses,
            procedures,
            labs,
            age,
            bmi,
            smoking,
            date,
            length_of_stay,
        });
    }

    let mut deceased_day = None;
    if let Some(on) = onset {
        let v = &visits[on];
        let smoker = smoking_status == Some(Smoking::Current);
        let z = a.mortality.logit(v.age, smoker, male);
        let (p6, p12) = (sigmoid(z), sigmoid(z + 0.6));
        let u: f64 = rng.random();
        let after = if u < p6 {
            Some(rng.random_range(1..=182))
        } else if u < p12 {
            Some(rng.random_range(183..=365))
        } else if u < p12 + (1.0 - p12) * 0.25 {
            Some(rng.random_range(366..=1500))
        } else {
            None
        };
        deceased_day = after.map(|d| v.date + d);
    } else if rng.random_bool(0.1) {
        deceased_day = Some(date + rng.random_range(30..=400));
    }
    if let Some(d) = deceased_day {
        visits.retain(|v| v.date <= d);
    }

    PatientJourney {
        patient_id,
        gender,
        visits,
        deceased_day,
    }
}

fn normalized(entries: &[(&str, f64)]) -> Vec<WeightedCode> {
    let total: f64 = entries.iter().map(|e| e.1).sum();
    entries
        .iter()
        .map(|(code, w)| WeightedCode {
            code: (*code).to_string(),
            p: w / total,
        })
        .collect()
}

const BACKGROUND_DX: [&str; 10] = ["I10", "E11", "E78", "J18", "R07", "M54", "K21", "N39", "R10", "F32"];
const BACKGROUND_PX: [&str; 6] = ["36415", "85025", "80053", "99284", "93005", "71020"];

struct Profile<'a> {
    name: &'a str,
    group: Option<&'a str>,
    signature: &'a str,
    comorbid: [&'a str; 4],
    procedures: [&'a str; 4],
    labs: [(&'a str, f64); 4],
    age: (f64, f64),
    male: f64,
    bmi: f64,
    risk: f64,
}

impl Profile<'_> {
    fn archetype(&self, weight: f64) -> Archetype {
        let mut dx: Vec<(&str, f64)> = BACKGROUND_DX.iter().map(|c| (*c, 0.5 / BACKGROUND_DX.len() as f64)).collect();
        dx.extend(self.comorbid.iter().map(|c| (*c, 0.5 / 4.0)));
        let mut px: Vec<(&str, f64)> = BACKGROUND_PX.iter().map(|c| (*c, 0.4 / BACKGROUND_PX.len() as f64)).collect();
        px.extend(self.procedures.iter().map(|c| (*c, 0.6 / 4.0)));
        Archetype {
            name: self.name.into(),
            group: self.group.map(Into::into),
            weight,
            diagnoses: normalized(&dx),
            procedures: normalized(&px),
            labs: normalized(&self.labs),
            signature: Some(self.signature.into()),
            signature_recur: 0.6,
            heart_failure_prob: 0.2,
            diagnoses_per_visit: [1, 3],
            procedures_per_visit: [0, 4],
            labs_per_visit: [0, 2],
            age_mean: self.age.0,
            age_sd: self.age.1,
            male_prob: self.male,
            bmi_mean: self.bmi,
            bmi_sd: 3.0,
            bmi_missing: 0.2,
            smoking: [0.5, 0.3, 0.2],
            smoking_missing: 0.25,
            long_stay_prob: 0.08,
            mortality: LogitWeights {
                intercept: self.risk,
                age_per_decade: 0.3,
                current_smoker: 0.5,
                male: 0.1,
            },
            readmission: LogitWeights {
                intercept: -1.0,
                age_per_decade: 0.2,
                current_smoker: 0.0,
                male: 0.0,
            },
        }
    }
}

const LABS: [&str; 6] = ["chemistry", "hematology", "urinalysis", "blood_gas", "special_chemistry", "special_lab"];

impl CohortSpec {
    /// Oncology cohort with six planted cancer groups; the leukaemia group is a
    /// two-variant mixture (chronic/older vs acute/younger) sharing code C91.
    pub fn oncology(patient_count: usize, seed: u64) -> Self {
        let profiles = [
            Profile {
                name: "lung",
                group: None,
                signature: "C34",
                comorbid: ["J44", "R05", "J96", "R06"],
                procedures: ["94760", "71250", "31624", "32405"],
                labs: [(LABS[0], 0.3), (LABS[3], 0.4), (LABS[1], 0.2), (LABS[2], 0.1)],
                age: (68.0, 8.0),
                male: 0.55,
                bmi: 25.0,
                risk: 0.2,
            },
            Profile {
                name: "breast",
                group: None,
                signature: "C50",
                comorbid: ["N63", "D05", "Z40", "N64"],
                procedures: ["77067", "19303", "88305", "96413"],
                labs: [(LABS[0], 0.3), (LABS[4], 0.4), (LABS[1], 0.2), (LABS[2], 0.1)],
                age: (58.0, 10.0),
                male: 0.02,
                bmi: 28.0,
                risk: -1.8,
            },
            Profile {
                name: "colon",
                group: None,
                signature: "C18",
                comorbid: ["K63", "D12", "K92", "K56"],
                procedures: ["45378", "44140", "74177", "88305"],
                labs: [(LABS[0], 0.4), (LABS[1], 0.3), (LABS[5], 0.2), (LABS[2], 0.1)],
                age: (66.0, 9.0),
                male: 0.5,
                bmi: 27.0,
                risk: -1.0,
            },
            Profile {
                name: "pancreas",
                group: None,
                signature: "C25",
                comorbid: ["K86", "R17", "K83", "E10"],
                procedures: ["43260", "74183", "48150", "47562"],
                labs: [(LABS[4], 0.4), (LABS[0], 0.4), (LABS[1], 0.1), (LABS[3], 0.1)],
                age: (67.0, 8.0),
                male: 0.5,
                bmi: 25.0,
                risk: 0.4,
            },
            Profile {
                name: "prostate",
                group: None,
                signature: "C61",
                comorbid: ["N40", "R33", "N13", "R31"],
                procedures: ["55700", "84153", "77427", "55866"],
                labs: [(LABS[2], 0.4), (LABS[0], 0.3), (LABS[4], 0.2), (LABS[1], 0.1)],
                age: (70.0, 7.0),
                male: 1.0,
                bmi: 27.0,
                risk: -2.0,
            },
            Profile {
                name: "leukaemia_chronic",
                group: Some("leukaemia"),
                signature: "C91",
                comorbid: ["D72", "R59", "D61", "I25"],
                procedures: ["38221", "86356", "96365", "J9035"],
                labs: [(LABS[1], 0.5), (LABS[0], 0.3), (LABS[5], 0.1), (LABS[2], 0.1)],
                age: (70.0, 6.0),
                male: 0.6,
                bmi: 26.0,
                risk: -0.3,
            },
            Profile {
                name: "leukaemia_acute",
                group: Some("leukaemia"),
                signature: "C91",
                comorbid: ["D70", "R50", "D69", "B37"],
                procedures: ["96450", "36556", "62270", "J9190"],
                labs: [(LABS[1], 0.5), (LABS[3], 0.2), (LABS[5], 0.2), (LABS[0], 0.1)],
                age: (12.0, 5.0),
                male: 0.55,
                bmi: 18.0,
                risk: -2.2,
            },
        ];
        let weights = [1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5];
        let archetypes = profiles.iter().zip(weights).map(|(p, w)| p.archetype(w)).collect();
        let to_cancer = TaskWindow::ToFirstCodeInclusive {
            prefix: CANCER_PREFIX.into(),
        };
        CohortSpec {
            patient_count,
            seed,
            min_visits: 5,
            max_visits: 10,
            short_journey_fraction: 0.1,
            archetypes,
            tasks: vec![
                LabelRule::Death {
                    task: "death_6m".into(),
                    horizon_days: 182,
                },
                LabelRule::Death {
                    task: "death_12m".into(),
                    horizon_days: 365,
                },
                LabelRule::Readmission {
                    task: "hf_readmit".into(),
                    horizon_days: 30,
                },
                LabelRule::ProlongedStay { task: "plos".into() },
                LabelRule::CodePresence {
                    task: "planted_dx".into(),
                    channel: CodeChannel::Diagnosis,
                    code: "E11".into(),
                    window: to_cancer.clone(),
                },
                LabelRule::CodePresence {
                    task: "planted_px".into(),
                    channel: CodeChannel::Procedure,
                    code: "99284".into(),
                    window: to_cancer,
                },
            ],
        }
    }
}
