//! End-to-end acceptance checks. Runs without the libtest harness so that every
//! check prints exactly one PASS/FAIL line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use exbehrt::cluster::{
    cluster_embeddings, extract_embeddings, subcluster, ClusterConfig, DensityParams, ReduceParams, NOISE,
};
use exbehrt::encoder::{
    age_token, encode, gender_token, reshape_channel, table_sizes, Channel, EncoderConfig, SlotGrid,
};
use exbehrt::interpret::{expected_gradients_signed, LinearSurrogate, ScalarModel};
use exbehrt::journey::vocab::{CLS, PAD, RESERVED, SEP};
use exbehrt::journey::{
    generate_cohort, normalize_all, split_cohort, CodeChannel, Cohort, CohortSpec, CohortSplit, Gender,
    PatientJourney, Smoking, TaskWindow, Visit, Vocabulary,
};
use exbehrt::nn::model::{cls_logit, embed_and_sum, forward_grid, mlm_logits};
use exbehrt::nn::{Focal, Graph, ModelConfig, ModelParams, Tensor};
use exbehrt::train::{
    ablation_run, adapt_pretrain, auroc, average_precision, evaluate, finetune, focal_loss, make_masking_plan,
    prepare_examples, pretrain, pretrain_examples, shuffle_purity, standard_arms, CodeFilter, LossKind, MaskAction,
    Objective, TaskData, TrainConfig, Warmup,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

struct Report {
    failed: usize,
    skipped: usize,
    only: Option<BTreeSet<usize>>,
}

impl Report {
    fn selected(&self, id: usize) -> bool {
        self.only.as_ref().is_none_or(|s| s.contains(&id))
    }

    fn run(&mut self, id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Check) {
        if !self.selected(id) {
            self.skipped += 1;
            return;
        }
        let t = Instant::now();
        let mut result = f();
        let elapsed = t.elapsed();
        if let (Ok(detail), Some(limit)) = (&result, limit) {
            if elapsed > limit {
                result = Err(format!("{detail}; took {:.1} s, limit {:.0} s", elapsed.as_secs_f64(), limit.as_secs_f64()));
            }
        }
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                self.failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {id:>2} {name}: {detail} ({:.2} s)", elapsed.as_secs_f64());
    }
}

// ---------------------------------------------------------------- encoder

fn visit(date: i64, d: &[&str], p: &[&str], l: &[&str]) -> Visit {
    Visit {
        diagnoses: d.iter().map(|s| s.to_string()).collect(),
        procedures: p.iter().map(|s| s.to_string()).collect(),
        labs: l.iter().map(|s| s.to_string()).collect(),
        age: 40 + date as u32,
        bmi: Some(24),
        smoking: Some(Smoking::Former),
        date,
        length_of_stay: 1,
    }
}

fn encoder_layout() -> Check {
    let sq = |v: &[u32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    ensure(reshape_channel(&[7, 8], 2) == vec![vec![7, 8]], || "equal-length case".into())?;
    ensure(reshape_channel(&[7, 8], 1) == vec![vec![7], vec![8]], || "overflow case".into())?;
    ensure(reshape_channel(&[], 1) == vec![vec![PAD]], || "underflow case".into())?;
    ensure(reshape_channel(&[7, 8, 9], 2) == vec![vec![7, 8], vec![9, PAD]], || "ragged overflow".into())?;

    let j = PatientJourney {
        patient_id: "figure".into(),
        gender: Gender::M,
        visits: vec![
            visit(0, &["A01", "A02"], &["p1", "p2"], &["l1"]),
            visit(5, &["A03"], &["p3", "p4"], &[]),
            visit(9, &["A04"], &[], &["l2"]),
        ],
        deceased_day: None,
    };
    let corpus = std::slice::from_ref(&j);
    let vocab = Vocabulary::build(corpus);
    let cfg = EncoderConfig::new(12).fitted(corpus).map_err(err)?;
    ensure(cfg.n_proc == Some(2) && cfg.n_lab == Some(1), || format!("caps {:?}/{:?}", cfg.n_proc, cfg.n_lab))?;
    let g = encode(&j, &vocab, &cfg).map_err(err)?;
    let d = |c: &str| vocab.id(CodeChannel::Diagnosis, c);
    let p = |c: &str| vocab.id(CodeChannel::Procedure, c);
    let l = |c: &str| vocab.id(CodeChannel::Lab, c);
    let want_diag = [CLS, d("A01"), d("A02"), SEP, d("A03"), SEP, d("A04")];
    let mut want = want_diag.to_vec();
    want.resize(12, PAD);
    ensure(g.diag_row == want, || format!("diagnosis row {}", sq(&g.diag_row)))?;
    let pad_to = |v: &[u32]| {
        let mut v = v.to_vec();
        v.resize(12, PAD);
        v
    };
    ensure(g.proc_rows[0] == pad_to(&[PAD, p("p1"), p("p2"), PAD, p("p3"), PAD, PAD]), || {
        format!("procedure row 0 {}", sq(&g.proc_rows[0]))
    })?;
    // the single-diagnosis visit stacks its two procedures vertically; the last visit has only PAD
    ensure(g.proc_rows[1] == pad_to(&[PAD, PAD, PAD, PAD, p("p4"), PAD, PAD]), || {
        format!("procedure row 1 {}", sq(&g.proc_rows[1]))
    })?;
    ensure(g.lab_rows[0] == pad_to(&[PAD, l("l1"), PAD, PAD, PAD, PAD, l("l2")]), || {
        format!("lab row {}", sq(&g.lab_rows[0]))
    })?;
    let a = |age: u32| age_token(age);
    ensure(g.age_row == pad_to(&[a(40), a(40), a(40), a(40), a(45), a(45), a(49)]), || "age row".into())?;
    let s = |v: u32| RESERVED + v;
    ensure(g.segment_row == pad_to(&[s(0), s(0), s(0), s(0), s(1), s(1), s(0)]), || "segment row".into())?;
    ensure(g.position_row == pad_to(&[s(0), s(0), s(0), s(0), s(1), s(1), s(2)]), || "position row".into())?;
    let gm = gender_token(Gender::M);
    ensure(g.gender_row == pad_to(&[PAD, gm, gm, gm, gm, gm, gm]), || "gender row".into())?;
    ensure(g.attention_mask == g.diag_row.iter().map(|t| *t != PAD).collect::<Vec<_>>(), || "mask".into())?;
    Ok("three reshape cases and the worked layout match".into())
}

// ---------------------------------------------------------------- width invariance

fn random_journey(rng: &mut ChaCha8Rng, id: usize) -> PatientJourney {
    let n_visits = rng.random_range(1..=6);
    let visits = (0..n_visits)
        .map(|v| {
            let nd = rng.random_range(1..=4);
            let np = rng.random_range(0..=5);
            let nl = rng.random_range(0..=3);
            Visit {
                diagnoses: (0..nd).map(|k| format!("D{:02}", (v * 7 + k * 3 + id) % 40)).collect::<BTreeSet<_>>().into_iter().collect(),
                procedures: (0..np).map(|k| format!("p{}", (k * 5 + id) % 30)).collect::<BTreeSet<_>>().into_iter().collect(),
                labs: (0..nl).map(|k| format!("l{}", (k + id) % 6)).collect::<BTreeSet<_>>().into_iter().collect(),
                age: 30 + v as u32,
                bmi: None,
                smoking: None,
                date: v as i64 * 10,
                length_of_stay: 1,
            }
        })
        .collect();
    PatientJourney {
        patient_id: format!("R{id}"),
        gender: Gender::F,
        visits,
        deceased_day: None,
    }
}

fn width_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let journeys: Vec<PatientJourney> = (0..1000).map(|i| random_journey(&mut rng, i)).collect();
    let vocab = Vocabulary::build(&journeys);
    let cfg = EncoderConfig::new(40).fitted(&journeys).map_err(err)?;
    let (np, nl) = (cfg.n_proc.unwrap_or(0), cfg.n_lab.unwrap_or(0));
    for j in &journeys {
        let base = encode(j, &vocab, &cfg).map_err(err)?;
        let mut grown = j.clone();
        let v = rng.random_range(0..grown.visits.len());
        let extra_p = rng.random_range(0..=50);
        let extra_l = rng.random_range(0..=50 - extra_p);
        grown.visits[v].procedures.extend((0..extra_p).map(|k| format!("x{k}")));
        grown.visits[v].labs.extend((0..extra_l).map(|k| format!("y{k}")));
        let g = encode(&grown, &vocab, &cfg).map_err(err)?;
        ensure(g.m == base.m && g.m == cfg.m, || format!("{}: width {} vs {}", j.patient_id, g.m, base.m))?;
        ensure(g.diag_row == base.diag_row, || format!("{}: diagnosis row changed", j.patient_id))?;
        ensure(g.proc_rows.len() == np && g.lab_rows.len() == nl, || {
            format!("{}: heights {}/{} vs caps {np}/{nl}", j.patient_id, g.proc_rows.len(), g.lab_rows.len())
        })?;
        ensure(g.proc_rows.iter().chain(&g.lab_rows).all(|r| r.len() == cfg.m), || "row width".into())?;
    }
    Ok(format!("1000 journeys, m = {}, caps {np}/{nl}", cfg.m))
}

// ---------------------------------------------------------------- gradients

fn small_model(journeys: &[PatientJourney], m: usize, seed: u64) -> Result<(Vocabulary, EncoderConfig, ModelParams), String> {
    let vocab = Vocabulary::build(journeys);
    let enc = EncoderConfig::new(m).fitted(journeys).map_err(err)?;
    let cfg = ModelConfig {
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        ff: 32,
        dropout: 0.0,
        vocab_sizes: table_sizes(&vocab, m),
        m,
        n_proc: enc.n_proc.unwrap_or(1),
        n_lab: enc.n_lab.unwrap_or(1),
    };
    let mut params = ModelParams::init(&cfg, seed).map_err(err)?;
    // move away from the near-symmetric initialisation, keeping PAD rows at zero
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let noise = Normal::new(0.0, 0.2).map_err(err)?;
    for (t, tensor) in params.tensors.iter_mut().enumerate() {
        let cols = tensor.cols();
        for (i, v) in tensor.data_mut().iter_mut().enumerate() {
            if t < 9 && i < cols {
                continue;
            }
            *v += noise.sample(&mut rng);
        }
    }
    Ok((vocab, enc, params))
}

fn objective(params: &ModelParams, grid: &SlotGrid, vocab: &Vocabulary) -> Result<(f64, Vec<Tensor>), String> {
    let plan = make_masking_plan(grid, vocab, 4);
    let masked = plan.apply(grid);
    let mut g = Graph::new(&params.tensors);
    let enc = forward_grid(&mut g, params, &masked, true, None).map_err(err)?;
    let mut cols: Vec<usize> = plan.targets.iter().map(|t| t.0).collect();
    let mut targets: Vec<usize> = plan.targets.iter().map(|t| t.1 as usize).collect();
    if cols.is_empty() {
        cols.push(1);
        targets.push(masked.diag_row[1] as usize);
    }
    let logits = mlm_logits(&mut g, params, enc.hidden, cols).map_err(err)?;
    let xent = g.softmax_xent(logits, targets).map_err(err)?;
    let z = cls_logit(&mut g, params, enc.hidden).map_err(err)?;
    let focal = g.binary_focal(z, vec![true], Focal { gamma: 2.0, alpha: Some(0.7) }).map_err(err)?;
    let total = g.add(xent, focal).map_err(err)?;
    let value = g.value(total).item();
    let grads = g.backward(total).map_err(err)?;
    Ok((value, grads.params))
}

fn gradient_check() -> Check {
    let cohort = generate_cohort(&CohortSpec::oncology(30, 2)).map_err(err)?;
    let (journeys, _) = normalize_all(&cohort.journeys);
    let (vocab, enc, params) = small_model(&journeys, 24, 5)?;
    let grid = encode(&journeys[0], &vocab, &enc).map_err(err)?;
    let (_, analytic) = objective(&params, &grid, &vocab)?;
    let candidates: Vec<(usize, usize)> = analytic
        .iter()
        .enumerate()
        .flat_map(|(t, g)| g.data().iter().enumerate().filter(|(_, v)| v.abs() > 1e-8).map(move |(i, _)| (t, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let picks: Vec<(usize, usize)> = candidates.choose_multiple(&mut rng, 100).cloned().collect();
    ensure(picks.len() == 100, || format!("only {} coordinates carry gradient", candidates.len()))?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &(t, i) in &picks {
        let mut plus = params.clone();
        plus.tensors[t].data_mut()[i] += h;
        let mut minus = params.clone();
        minus.tensors[t].data_mut()[i] -= h;
        let numeric = (objective(&plus, &grid, &vocab)?.0 - objective(&minus, &grid, &vocab)?.0) / (2.0 * h);
        let a = analytic[t].data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
        worst = worst.max(rel);
    }
    ensure(worst < 1e-4, || format!("worst relative error {worst:.3e}"))?;
    Ok(format!("100 coordinates, worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- losses

fn loss_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let p: f64 = rng.random_range(1e-9..1.0 - 1e-9);
        let f = focal_loss(p, 0.0, 1.0).map_err(err)?;
        worst = worst.max((f + p.ln()).abs());
    }
    ensure(worst <= 1e-12, || format!("focal vs cross-entropy differs by {worst:e}"))?;
    let v = focal_loss(0.9, 2.0, 1.0).map_err(err)?;
    ensure((v - 1.0536e-3).abs() <= 1e-7, || format!("focal(0.9) = {v:e}"))?;
    Ok(format!("max |focal - ce| {worst:.1e}; focal(0.9, 2, 1) = {v:.7e}"))
}

// ---------------------------------------------------------------- masking

fn masking_statistics() -> Check {
    let cohort = generate_cohort(&CohortSpec::oncology(400, 3)).map_err(err)?;
    let (journeys, _) = normalize_all(&cohort.journeys);
    let vocab = Vocabulary::build(&journeys);
    let enc = EncoderConfig::new(64).fitted(&journeys).map_err(err)?;
    let grids: Vec<SlotGrid> = journeys.iter().map(|j| encode(j, &vocab, &enc)).collect::<Result<_, _>>().map_err(err)?;
    let (mut positions, mut counts) = (0usize, [0usize; 3]);
    let mut seed = 0u64;
    while positions < 300_000 {
        for g in &grids {
            let plan = make_masking_plan(g, &vocab, seed);
            seed += 1;
            positions += g.diagnosis_columns().count();
            for a in &plan.actions {
                match a {
                    MaskAction::Mask => counts[0] += 1,
                    MaskAction::ReplaceRandom => counts[1] += 1,
                    MaskAction::KeepSelected => counts[2] += 1,
                    MaskAction::Keep => {}
                }
            }
        }
    }
    let selected: usize = counts.iter().sum();
    let frac = selected as f64 / positions as f64;
    let share = counts.map(|c| c as f64 / selected as f64);
    ensure((frac - 0.15).abs() <= 0.004, || format!("selection fraction {frac:.4}"))?;
    for (s, want) in share.iter().zip([0.8, 0.1, 0.1]) {
        ensure((s - want).abs() <= 0.01, || format!("action shares {share:.4?}"))?;
    }
    Ok(format!("{positions} positions, selected {frac:.4}, mask/replace/keep {:.4}/{:.4}/{:.4}", share[0], share[1], share[2]))
}

// ---------------------------------------------------------------- metrics

fn brute_auroc(s: &[f64], y: &[bool]) -> Option<f64> {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                pairs += 1;
                twice += if s[i] > s[j] { 2 } else if s[i] == s[j] { 1 } else { 0 };
            }
        }
    }
    (pairs > 0).then(|| twice as f64 / (2 * pairs) as f64)
}

fn brute_aps(s: &[f64], y: &[bool]) -> Option<f64> {
    let pos = y.iter().filter(|v| **v).count();
    if pos == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut ap, mut prev) = (0.0, 0.0);
    for t in thresholds {
        let tp = (0..s.len()).filter(|&i| s[i] >= t && y[i]).count() as f64;
        let k = (0..s.len()).filter(|&i| s[i] >= t).count() as f64;
        let r = tp / pos as f64;
        ap += (r - prev) * tp / k;
        prev = r;
    }
    Some(ap)
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cases = 0usize;
    let mut worst_aps: f64 = 0.0;
    for n in 1..=8usize {
        // exhaustive ternary scores up to n = 6, random tied scores beyond
        let score_sets: Vec<Vec<f64>> = if n <= 6 {
            (0..3usize.pow(n as u32))
                .map(|c| (0..n).map(|i| ((c / 3usize.pow(i as u32)) % 3) as f64 * 0.25).collect())
                .collect()
        } else {
            (0..200).map(|_| (0..n).map(|_| rng.random_range(0..4) as f64 / 3.0).collect()).collect()
        };
        for scores in &score_sets {
            for pattern in 0..(1u32 << n) {
                let labels: Vec<bool> = (0..n).map(|i| pattern >> i & 1 == 1).collect();
                cases += 1;
                match (brute_auroc(scores, &labels), auroc(scores, &labels)) {
                    (Some(b), Ok(a)) => ensure(a == b, || format!("auroc {a} vs {b} on {scores:?} {labels:?}"))?,
                    (None, Err(_)) => {}
                    (b, a) => return Err(format!("auroc definedness differs: {b:?} vs {a:?}")),
                }
                match (brute_aps(scores, &labels), average_precision(scores, &labels)) {
                    (Some(b), Ok(a)) => {
                        worst_aps = worst_aps.max((a - b).abs());
                        ensure((a - b).abs() <= 1e-12, || format!("aps {a} vs {b} on {scores:?} {labels:?}"))?
                    }
                    (None, Err(_)) => {}
                    (b, a) => return Err(format!("aps definedness differs: {b:?} vs {a:?}")),
                }
            }
        }
    }
    Ok(format!("{cases} score/label vectors; auroc exact, max aps error {worst_aps:.1e}"))
}

// ---------------------------------------------------------------- planted tasks

struct Planted {
    cohort: Cohort,
    split: CohortSplit,
    vocab: Vocabulary,
    enc: EncoderConfig,
    config: ModelConfig,
}

const PLANTED_M: usize = 48;

fn planted() -> Result<Planted, String> {
    let cohort = generate_cohort(&CohortSpec::oncology(5000, 7)).map_err(err)?;
    let (journeys, _) = normalize_all(&cohort.journeys);
    let split = split_cohort(&journeys, [0.8, 0.1, 0.1], 7).map_err(err)?;
    let vocab = Vocabulary::build(&split.train);
    let enc = EncoderConfig::new(PLANTED_M).fitted(&split.train).map_err(err)?;
    let config = ModelConfig {
        d_model: 32,
        n_layers: 2,
        n_heads: 4,
        ff: 128,
        dropout: 0.1,
        vocab_sizes: table_sizes(&vocab, PLANTED_M),
        m: PLANTED_M,
        n_proc: enc.n_proc.unwrap_or(1),
        n_lab: enc.n_lab.unwrap_or(1),
    };
    Ok(Planted {
        cohort,
        split,
        vocab,
        enc,
        config,
    })
}

fn task_labels(cohort: &Cohort, task: &str) -> BTreeMap<String, bool> {
    cohort.labels.iter().filter(|l| l.task == task).map(|l| (l.patient_id.clone(), l.label == 1)).collect()
}

fn task_window(task: &str) -> TaskWindow {
    CohortSpec::oncology(1, 0)
        .tasks
        .into_iter()
        .find(|r| r.task() == task)
        .map(|r| r.window())
        .unwrap_or(TaskWindow::Full)
}

fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        loss: LossKind::CrossEntropy,
        warmup: Warmup::DEFAULT,
        epochs,
        batch_size: 32,
        objective: Objective::Classify,
        seed: 3,
    }
}

/// Fine-tunes from a fresh initialisation and returns the model with its test AUROC.
fn fit_task(p: &Planted, labels: &BTreeMap<String, bool>, window: &TaskWindow) -> Result<(ModelParams, f64), String> {
    let prep = |j: &[PatientJourney]| prepare_examples(j, labels, window, &p.vocab, &p.enc).map(|x| x.examples).map_err(err);
    let (train, validation, test) = (prep(&p.split.train)?, prep(&p.split.validation)?, prep(&p.split.test)?);
    let init = ModelParams::init(&p.config, 1).map_err(err)?;
    let out = finetune(init, &train, &validation, &train_config(5)).map_err(err)?;
    let (_, m) = evaluate(&out.params, &test).map_err(err)?;
    Ok((out.params, m.auroc.ok_or("test split has one class")?))
}

fn learnability(p: &Planted, model: &mut Option<ModelParams>) -> Check {
    let labels = task_labels(&p.cohort, "planted_dx");
    let window = task_window("planted_dx");
    let (params, test_auroc) = fit_task(p, &labels, &window)?;
    *model = Some(params);
    let mut controls = Vec::new();
    for seed in 1..=5u64 {
        let ids: Vec<String> = labels.keys().cloned().collect();
        let mut values: Vec<bool> = labels.values().cloned().collect();
        values.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted: BTreeMap<String, bool> = ids.into_iter().zip(values).collect();
        controls.push(fit_task(p, &permuted, &window)?.1);
    }
    let control = controls.iter().sum::<f64>() / controls.len() as f64;
    ensure(test_auroc >= 0.95, || format!("test auroc {test_auroc:.4}"))?;
    ensure((control - 0.5).abs() <= 0.05, || format!("shuffled-label control auroc {control:.4} ({controls:.3?})"))?;
    Ok(format!("test auroc {test_auroc:.4}; shuffled-label control {control:.4} over 5 permutations {controls:.3?}"))
}

fn ablation_direction(p: &Planted) -> Check {
    let labels = task_labels(&p.cohort, "planted_px");
    let window = task_window("planted_px");
    let arms: Vec<_> = standard_arms().into_iter().filter(|a| a.name == "diagnosis_only" || a.name == "all_channels").collect();
    let data = TaskData {
        task: "planted_px",
        window: &window,
        labels: &labels,
        train: &p.split.train,
        validation: &p.split.validation,
        test: &p.split.test,
    };
    let init = ModelParams::init(&p.config, 1).map_err(err)?;
    let rows = ablation_run(&arms, &data, &p.vocab, &p.enc, &init, &train_config(5)).map_err(err)?;
    let get = |name: &str| rows.iter().find(|r| r.arm == name).and_then(|r| r.auroc).ok_or(format!("no auroc for {name}"));
    let (base, full) = (get("diagnosis_only")?, get("all_channels")?);
    ensure(full - base >= 0.05, || format!("diagnosis-only {base:.4}, all channels {full:.4}"))?;
    Ok(format!("diagnosis-only auroc {base:.4}, all channels {full:.4} (+{:.4})", full - base))
}

fn purity(p: &Planted, model: Option<&ModelParams>) -> Check {
    let params = model.ok_or("needs the fine-tuned model of check 7")?;
    let window = task_window("planted_dx");
    let test: Vec<PatientJourney> = p.split.test.iter().filter_map(|j| window.apply(j)).take(50).collect();
    ensure(test.len() == 50, || format!("only {} test patients", test.len()))?;
    let r = shuffle_purity(params, &test, &p.vocab, &p.enc, 50, 9).map_err(err)?;
    ensure(r.mean >= 0.95, || format!("mean purity {:.4}", r.mean))?;
    Ok(format!("mean purity {:.4} (std {:.4}) over 50 shuffles of 50 patients", r.mean, r.std))
}

// ---------------------------------------------------------------- attribution

/// Summed embeddings of a grid's first `width` columns.
fn summed(params: &ModelParams, grid: &SlotGrid, width: usize) -> Result<Tensor, String> {
    let mut g = Graph::new(&params.tensors);
    let v = embed_and_sum(&mut g, grid, &params.config, width).map_err(err)?;
    Ok(g.value(v).clone())
}

/// Embedding values of one grid row over the first `width` columns, read straight from the tables.
fn row_values(params: &ModelParams, channel: Channel, tokens: &[u32], width: usize) -> Vec<f64> {
    let d = params.config.d_model;
    let table = &params.tensors[ModelParams::embedding_index(channel)];
    let mut out = vec![0.0; width * d];
    for (j, &t) in tokens[..width].iter().enumerate() {
        if t != PAD {
            out[j * d..(j + 1) * d].copy_from_slice(table.row(t as usize));
        }
    }
    out
}

fn attribution(p: &Planted, model: Option<&ModelParams>) -> Check {
    let init;
    let params = match model {
        Some(m) => m,
        None => {
            init = ModelParams::init(&p.config, 1).map_err(err)?;
            &init
        }
    };
    let labels = task_labels(&p.cohort, "planted_dx");
    let window = task_window("planted_dx");
    let prep = |j: &[PatientJourney]| prepare_examples(j, &labels, &window, &p.vocab, &p.enc).map(|x| x.examples).map_err(err);
    let test = prep(&p.split.test)?;
    let explained = test.iter().find(|e| e.label == Some(true)).ok_or("no positive test patient")?;
    let grid = &explained.grid;
    let width = grid.active_len().max(1);
    let background: Vec<SlotGrid> = prep(&p.split.train)?.into_iter().take(200).map(|e| e.grid).collect();
    let d = params.config.d_model;
    let k = 2000;

    // surrogate head along the patient's deviation from the background mean, so f(x) > E f(b)
    let sx = summed(params, grid, width)?;
    let mut w = vec![0.0; PLANTED_M * d];
    for b in &background {
        for (wi, v) in w.iter_mut().zip(summed(params, b, width)?.data()) {
            *wi -= v / background.len() as f64;
        }
    }
    for (wi, v) in w.iter_mut().zip(sx.data()) {
        *wi += v;
    }
    let w = Tensor::new(vec![PLANTED_M, d], w).map_err(err)?;
    // every cell equals w ⊙ (e_x − mean of the drawn baselines)
    let lin = expected_gradients_signed(&LinearSurrogate { w: w.clone() }, params, grid, &background, k, 5).map_err(err)?;
    let mut worst_cell: f64 = 0.0;
    for (ri, row) in grid.rows().iter().enumerate() {
        let ex = row_values(params, row.channel, row.tokens, width);
        let mut mean_b = vec![0.0; width * d];
        for &b in &lin.baselines {
            let br = &background[b].rows()[ri];
            for (m, v) in mean_b.iter_mut().zip(row_values(params, br.channel, br.tokens, width)) {
                *m += v / k as f64;
            }
        }
        let got = &lin.rows[ri].3;
        for i in 0..width * d {
            let want = w.data()[i] * (ex[i] - mean_b[i]);
            worst_cell = worst_cell.max((got[i] - want).abs());
        }
    }
    ensure(worst_cell <= 1e-9, || format!("linear cell error {worst_cell:e}"))?;

    // completeness against the whole background, not just the drawn baselines
    let lin_model = LinearSurrogate { w };
    let f = |g: &SlotGrid| -> Result<f64, String> {
        let e = summed(params, g, width)?;
        Ok(lin_model.value_and_grad(&e, &grid.attention_mask[..width]).map_err(err)?.0)
    };
    let fx = f(grid)?;
    let mut fb = 0.0;
    for b in &background {
        fb += f(b)? / background.len() as f64;
    }
    let gap = fx - fb;
    let rel = (lin.total() - gap).abs() / gap.abs();
    ensure(rel <= 0.02, || format!("sum {:.5} vs f(x) - E f(b) = {gap:.5}, relative {rel:.4}", lin.total()))?;
    Ok(format!("max cell error {worst_cell:.1e}; signed sum {:.4} vs {gap:.4} (relative {rel:.2e})", lin.total()))
}

// ---------------------------------------------------------------- clustering

fn cluster_recovery() -> Check {
    let cohort = generate_cohort(&CohortSpec::oncology(3000, 7)).map_err(err)?;
    let (journeys, _) = normalize_all(&cohort.journeys);
    let split = split_cohort(&journeys, [0.9, 0.1, 0.0], 7).map_err(err)?;
    let vocab = Vocabulary::build(&journeys);
    let m = 48;
    let enc = EncoderConfig::new(m).fitted(&split.train).map_err(err)?;
    let config = ModelConfig {
        d_model: 32,
        n_layers: 2,
        n_heads: 4,
        ff: 128,
        dropout: 0.0,
        vocab_sizes: table_sizes(&vocab, m),
        m,
        n_proc: enc.n_proc.unwrap_or(1),
        n_lab: enc.n_lab.unwrap_or(1),
    };
    let train = pretrain_examples(&split.train, &vocab, &enc).map_err(err)?;
    let validation = pretrain_examples(&split.validation, &vocab, &enc).map_err(err)?;
    let tc = TrainConfig {
        epochs: 10,
        objective: Objective::Mlm,
        ..train_config(10)
    };
    let base = pretrain(ModelParams::init(&config, 1).map_err(err)?, &train, &validation, &vocab, &tc).map_err(err)?;
    let adapted = adapt_pretrain(
        base.params.clone(),
        &train,
        &validation,
        &vocab,
        &TrainConfig { epochs: 1, ..tc },
        &CodeFilter::prefix("C"),
    )
    .map_err(err)?;
    let emb = extract_embeddings(&adapted.params, &journeys, &vocab, &enc).map_err(err)?;
    let cfg = ClusterConfig {
        cluster_dim: 10,
        reduce: ReduceParams::default(),
        density: DensityParams {
            min_cluster_size: 100,
            min_samples: 10,
            epsilon: None,
        },
        seed: 0,
    };
    let run = cluster_embeddings(&emb, &journeys, &cfg).map_err(err)?;
    let clusters = &run.report.clusters;
    let codes: BTreeSet<_> = clusters.iter().filter_map(|c| c.modal_diagnosis.clone()).collect();
    let n = clusters.len() as f64;
    let in_cluster = clusters.iter().map(|c| c.in_cluster).sum::<f64>() / n;
    let pur = clusters.iter().map(|c| c.purity).sum::<f64>() / n;
    ensure(clusters.len() >= 5, || format!("{} clusters", clusters.len()))?;
    ensure(codes.len() == clusters.len(), || format!("modal codes repeat: {codes:?}"))?;
    ensure(in_cluster >= 0.8 && pur >= 0.8, || format!("in-cluster {in_cluster:.3}, purity {pur:.3}"))?;

    // second pass on the leukaemia cluster with the general (pre-adaptation) representation
    let leuk = clusters.iter().find(|c| c.modal_diagnosis.as_deref() == Some("C91")).ok_or("no C91 cluster")?;
    let base_emb = extract_embeddings(&base.params, &journeys, &vocab, &enc).map_err(err)?;
    let sub_cfg = ClusterConfig {
        density: DensityParams {
            min_cluster_size: 50,
            ..cfg.density
        },
        ..cfg
    };
    let sub = subcluster(&base_emb, &journeys, &run.assignments, leuk.cluster, &sub_cfg).map_err(err)?;
    let members: Vec<usize> = (0..journeys.len()).filter(|&i| run.assignments[i] == leuk.cluster).collect();
    let truth: BTreeMap<&str, &str> = cohort.truth.iter().map(|t| (t.patient_id.as_str(), t.archetype.as_str())).collect();
    let mut tally: BTreeMap<&str, BTreeMap<i64, usize>> = BTreeMap::new();
    for (r, &i) in members.iter().enumerate() {
        let variant = truth.get(journeys[i].patient_id.as_str()).copied().unwrap_or("?");
        *tally.entry(variant).or_default().entry(sub.assignments[r]).or_default() += 1;
    }
    let mut homes = BTreeSet::new();
    let mut detail = Vec::new();
    for (variant, counts) in &tally {
        let total: usize = counts.values().sum();
        let (home, best) = counts.iter().filter(|(k, _)| **k != NOISE).max_by_key(|(_, v)| **v).map(|(k, v)| (*k, *v)).unwrap_or((NOISE, 0));
        let share = best as f64 / total as f64;
        ensure(share >= 0.8, || format!("{variant}: {best}/{total} in its subcluster"))?;
        homes.insert(home);
        detail.push(format!("{variant} {share:.3}"));
    }
    ensure(tally.len() == 2 && homes.len() == 2, || format!("variants {tally:?}"))?;
    Ok(format!(
        "{} clusters, in-cluster {in_cluster:.3}, purity {pur:.3}; C91 splits {}",
        clusters.len(),
        detail.join(", ")
    ))
}

// ---------------------------------------------------------------- determinism

fn hashes(root: &Path) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(err)? {
            let path = entry.map_err(err)?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = fs::read(&path).map_err(err)?;
                let rel = path.strip_prefix(root).map_err(err)?.display().to_string();
                let digest = Sha256::digest(&bytes);
                out.insert(rel, digest.iter().map(|b| format!("{b:02x}")).collect::<String>());
            }
        }
    }
    Ok(out)
}

const PIPELINE: [(&str, &[&str]); 9] = [
    ("generate", &["patients=240"]),
    ("pretrain", &["data=gen", "epochs=1"]),
    ("adapt", &["data=gen", "checkpoint=pre"]),
    ("finetune", &["data=gen", "checkpoint=pre", "epochs=1"]),
    ("gridsearch", &["data=gen", "checkpoint=pre", "epochs=1", "lrs=5e-5"]),
    ("eval", &["data=gen", "checkpoint=finetune", "shuffle_patients=5", "shuffle_repeats=3"]),
    ("attribute", &["data=gen", "checkpoint=finetune", "k=20", "background=10"]),
    ("cluster", &["data=gen", "checkpoint=adapt", "min_cluster_size=20"]),
    ("ablate", &["data=gen", "checkpoint=pre", "epochs=1", "arms=diagnosis_only,all_channels"]),
];

fn determinism() -> Check {
    let bin = env!("CARGO_BIN_EXE_exbehrt");
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let root = tmp.path().join(run);
        fs::create_dir_all(&root).map_err(err)?;
        for (cmd, sets) in PIPELINE {
            let out = match cmd {
                "generate" => "gen",
                "pretrain" => "pre",
                other => other,
            };
            let mut c = Command::new(bin);
            c.current_dir(&root).arg(cmd).args(["--seed", "11", "--threads", "1", "--out", out]);
            for s in sets {
                c.args(["--set", s]);
            }
            let status = c.env("RUST_LOG", "warn").output().map_err(err)?;
            ensure(status.status.success(), || {
                format!("{cmd} failed: {}", String::from_utf8_lossy(&status.stderr).trim())
            })?;
        }
        trees.push(hashes(&root)?);
    }
    ensure(trees[0].len() == trees[1].len(), || "different file sets".into())?;
    let differing: Vec<&String> = trees[0].iter().filter(|(k, v)| trees[1].get(*k) != Some(v)).map(|(k, _)| k).collect();
    ensure(differing.is_empty(), || format!("differing outputs {differing:?}"))?;
    Ok(format!("{} commands, {} files byte-identical across two runs", PIPELINE.len(), trees[0].len()))
}

fn main() -> ExitCode {
    // ACCEPTANCE_ONLY=7,10 runs a subset
    let only = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect::<BTreeSet<usize>>());
    let mut report = Report {
        failed: 0,
        skipped: 0,
        only,
    };
    let secs = |s: u64| Some(Duration::from_secs(s));
    report.run(1, "encoder layout", secs(1), encoder_layout);
    report.run(2, "width invariance", secs(10), width_invariance);
    report.run(3, "gradient check", secs(30), gradient_check);
    report.run(4, "loss identities", None, loss_identities);
    report.run(5, "masking statistics", None, masking_statistics);
    report.run(6, "metric oracles", None, metric_oracles);

    let t = Instant::now();
    let setup = if (7..=10).any(|i| report.selected(i)) { planted() } else { Err("not needed".into()) };
    let setup_time = t.elapsed();
    let mut model = None;
    match &setup {
        Ok(p) => {
            report.run(7, "planted-task learnability", Some(Duration::from_secs(600) - setup_time), || learnability(p, &mut model));
            report.run(8, "feature-ablation direction", None, || ablation_direction(p));
            report.run(9, "shuffle purity", None, || purity(p, model.as_ref()));
            report.run(10, "attribution exactness", None, || attribution(p, model.as_ref()));
        }
        Err(e) => {
            for (id, name) in [(7, "planted-task learnability"), (8, "feature-ablation direction"), (9, "shuffle purity"), (10, "attribution exactness")] {
                report.run(id, name, None, || Err(format!("cohort setup failed: {e}")));
            }
        }
    }
    report.run(11, "cluster recovery", secs(300), cluster_recovery);
    report.run(12, "CLI determinism", None, determinism);

    let ran = 12 - report.skipped;
    println!("acceptance: {} of {ran} passed", ran - report.failed);
    if report.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
