use std::collections::BTreeMap;

use exbehrt::cluster::{cluster_analytics, density_cluster, extract_embeddings, reduce, DensityParams, EmbeddingMatrix, ReduceParams, NOISE};
use exbehrt::encoder::{table_sizes, EncoderConfig};
use exbehrt::journey::{generate_cohort, normalize_all, CohortSpec, Gender, PatientJourney, Visit, Vocabulary};
use exbehrt::nn::{ModelConfig, ModelParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn three_blobs_in_wide_space_separate_after_reduction() {
    let (d, per) = (288, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let centres: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..d).map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>())
        .collect();
    let mut data = Vec::with_capacity(3 * per * d);
    let mut truth = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per {
            data.extend(centre.iter().map(|v| {
                let e: f64 = StandardNormal.sample(&mut rng);
                v + 0.5 * e
            }));
            truth.push(c as i64);
        }
    }
    let ids = (0..3 * per).map(|i| format!("P{i}")).collect();
    let m = EmbeddingMatrix::new(ids, d, data).unwrap();
    let r = reduce(&m, 2, &ReduceParams::default(), 0).unwrap();
    assert!(r.explained_variance[0] >= r.explained_variance[1]);
    let labels = density_cluster(&r.matrix, &DensityParams { min_cluster_size: 50, min_samples: 10, epsilon: None });
    let noise = labels.iter().filter(|&&l| l == NOISE).count();
    assert!(noise <= 15, "{noise} noise points");
    // clusters coincide with blobs up to renaming
    let mut map = BTreeMap::new();
    for (l, t) in labels.iter().zip(&truth).filter(|(l, _)| **l != NOISE) {
        assert_eq!(*map.entry(*l).or_insert(*t), *t);
    }
    assert_eq!(map.len(), 3);
}

fn patient(id: usize, codes: &[String]) -> PatientJourney {
    PatientJourney {
        patient_id: format!("P{id}"),
        gender: Gender::M,
        visits: vec![Visit {
            diagnoses: codes.to_vec(),
            procedures: vec![],
            labs: vec![],
            age: 50,
            bmi: None,
            smoking: None,
            date: 0,
            length_of_stay: 1,
        }],
        deceased_day: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn in_cluster_and_purity_match_counting(
        people in prop::collection::vec((prop::sample::subsequence(vec!["A01", "A02", "B01", "C50", "C91"], 1..4), -1i64..3), 1..60)
    ) {
        let journeys: Vec<PatientJourney> = people
            .iter()
            .enumerate()
            .map(|(i, (codes, _))| patient(i, &codes.iter().map(|c| c.to_string()).collect::<Vec<_>>()))
            .collect();
        let assignments: Vec<i64> = people.iter().map(|p| p.1).collect();
        let report = cluster_analytics(&assignments, &journeys, None).unwrap();
        for c in &report.clusters {
            let members: Vec<usize> = (0..journeys.len()).filter(|&i| assignments[i] == c.cluster).collect();
            let carries = |i: usize, code: &str| journeys[i].visits[0].diagnoses.iter().any(|d| d == code);
            // modal code by counting, ties to the smallest code
            let mut best: Option<(&str, usize)> = None;
            for code in ["A01", "A02", "B01", "C50", "C91"] {
                let k = members.iter().filter(|&&i| carries(i, code)).count();
                if k > 0 && best.is_none_or(|b| k > b.1) {
                    best = Some((code, k));
                }
            }
            let (code, k) = best.unwrap();
            let carriers = (0..journeys.len()).filter(|&i| carries(i, code)).count();
            prop_assert_eq!(c.modal_diagnosis.as_deref(), Some(code));
            prop_assert_eq!(c.size, members.len());
            prop_assert!((c.in_cluster - k as f64 / members.len() as f64).abs() < 1e-12);
            prop_assert!((c.purity - k as f64 / carriers as f64).abs() < 1e-12);
        }
        let clustered: usize = report.clusters.iter().map(|c| c.size).sum();
        prop_assert_eq!(clustered + report.noise, journeys.len());
    }
}

#[test]
fn identical_journeys_embed_identically() {
    let cohort = generate_cohort(&CohortSpec::oncology(20, 4)).unwrap();
    let (mut journeys, _) = normalize_all(&cohort.journeys);
    let mut twin = journeys[3].clone();
    twin.patient_id = "twin".into();
    journeys.push(twin);
    let vocab = Vocabulary::build(&journeys);
    let enc = EncoderConfig::new(32).fitted(&journeys).unwrap();
    let cfg = ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        ff: 32,
        dropout: 0.1,
        vocab_sizes: table_sizes(&vocab, 32),
        m: 32,
        n_proc: enc.n_proc.unwrap(),
        n_lab: enc.n_lab.unwrap(),
    };
    let params = ModelParams::init(&cfg, 8).unwrap();
    let e = extract_embeddings(&params, &journeys, &vocab, &enc).unwrap();
    assert_eq!(e.row(3), e.row(journeys.len() - 1));
    assert_ne!(e.row(3), e.row(4));
    assert_eq!(e.ids[journeys.len() - 1], "twin");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let i = rng.random_range(0..journeys.len());
    assert!(e.row(i).iter().all(|v| v.is_finite()));
}
