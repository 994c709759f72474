//! Journeys, vocabularies, data-processing rules and synthetic cohorts.

pub mod io;
mod normalize;
mod split;
pub mod synth;
mod types;
pub mod vocab;
mod window;

pub use normalize::{filter_pretrain_cohort, normalize_all, normalize_journey, truncate_diagnosis, MAX_DIAGNOSES, MIN_PRETRAIN_VISITS};
pub use split::{patient_key, split_cohort, split_cohort_aligned, CohortSplit, Split};
pub use synth::{generate_cohort, Archetype, Cohort, CohortSpec, LabelRow, LabelRule, LogitWeights, PatientTruth, WeightedCode};
pub use types::{is_diagnosis_code, CodeChannel, ConceptCode, Gender, PatientJourney, Smoking, Visit};
pub use vocab::Vocabulary;
pub use window::TaskWindow;
