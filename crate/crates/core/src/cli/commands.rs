use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::settings::{key, Key, Settings};
use crate::cluster::{
    cluster_embeddings, extract_embeddings, scatter_svg, subcluster, ClusterConfig, ClusterRun, DensityParams,
    ReduceParams, CANCER_PREFIX,
};
use crate::encoder::{encode, table_sizes, ChannelFlags, EncoderConfig, SlotGrid};
use crate::error::{Error, Result};
use crate::interpret::{attention_heatmap, attention_map, attribution_heatmap, expected_gradients, slot_table_csv};
use crate::journey::io::{labels_for_task, read_journeys, read_labels, write_journeys, write_labels, write_truth};
use crate::journey::{
    filter_pretrain_cohort, generate_cohort, normalize_all, split_cohort, CohortSpec, PatientJourney, Split,
    TaskWindow, Vocabulary,
};
use crate::nn::{load_params, save_params, ModelConfig, ModelParams};
use crate::train::{
    ablation_run, adapt_pretrain, binary_metrics, finetune, grid_search, group_metrics, predict, prepare_examples,
    pretrain, pretrain_examples, search_space, shuffle_purity, standard_arms, write_log, BinaryMetrics, CodeFilter,
    Example, GroupMetrics, LossKind, Objective, PurityReport, TaskData, TrainConfig, Warmup,
};

const SPLITS: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

pub const GENERATE: [Key; 3] = [
    key("patients", "5000", "cohort size"),
    key("ratios", "0.8,0.1,0.1", "train, validation and test fractions"),
    key("split_seed", "7", "seed of the patient split"),
];

const DATA: Key = key("data", "out/generate", "directory written by `generate`");
const CHECKPOINT: Key = key("checkpoint", "out/pretrain", "model directory to start from");

macro_rules! train_keys {
    ($lr:literal, $epochs:literal) => {
        [
            key("lr", $lr, "peak learning rate"),
            key("epochs", $epochs, "training epochs"),
            key("batch_size", "32", "examples per optimizer step"),
            key("warmup", "linear", "linear or none"),
            key("loss", "cross_entropy", "cross_entropy or focal"),
            key("gamma", "2", "focal exponent"),
            key("alpha", "none", "focal positive-class weight in (0, 1]"),
        ]
    };
}

pub const PRETRAIN: [Key; 18] = {
    let t = train_keys!("0.001", "10");
    [
        DATA,
        key("m", "48", "grid width"),
        key("percentile", "0.95", "quantile for procedure and lab row caps"),
        key("d_model", "32", "hidden size"),
        key("n_layers", "2", "encoder layers"),
        key("n_heads", "4", "attention heads"),
        key("ff", "128", "feed-forward width"),
        key("dropout", "0.1", "dropout rate"),
        key("objective", "mlm", "mlm or mlm_plos"),
        key("init_seed", "1", "seed of the weight initialisation"),
        key("channels", "all", "all or diagnosis_only"),
        t[0],
        t[1],
        t[2],
        t[3],
        t[4],
        t[5],
        t[6],
    ]
};

pub const ADAPT: [Key; 10] = {
    let t = train_keys!("0.001", "1");
    [
        DATA,
        CHECKPOINT,
        key("prefix", "C", "diagnosis prefix of the maskable codes"),
        t[0],
        t[1],
        t[2],
        t[3],
        t[4],
        t[5],
        t[6],
    ]
};

macro_rules! task_keys {
    () => {
        [
            DATA,
            CHECKPOINT,
            key("task", "planted_dx", "label task"),
            key("window", "to_first:C", "full, to_first:<prefix> or year_before:<code>"),
        ]
    };
}

pub const FINETUNE: [Key; 11] = {
    let a = task_keys!();
    let t = train_keys!("0.001", "6");
    [a[0], a[1], a[2], a[3], t[0], t[1], t[2], t[3], t[4], t[5], t[6]]
};

pub const GRIDSEARCH: [Key; 7] = {
    let a = task_keys!();
    [
        a[0],
        a[1],
        a[2],
        a[3],
        key("lrs", "3e-5,4e-5,5e-5", "learning rates of the grid"),
        key("epochs", "6", "training epochs per grid point"),
        key("batch_size", "32", "examples per optimizer step"),
    ]
};

pub const EVAL: [Key; 7] = {
    let a = task_keys!();
    [
        a[0],
        key("checkpoint", "out/finetune", "fine-tuned model directory"),
        a[2],
        a[3],
        key("split", "test", "train, validation or test"),
        key("shuffle_patients", "0", "patients in the within-visit shuffle test; 0 skips it"),
        key("shuffle_repeats", "50", "shuffles per patient"),
    ]
};

pub const ATTRIBUTE: [Key; 10] = {
    let a = task_keys!();
    [
        a[0],
        key("checkpoint", "out/finetune", "fine-tuned model directory"),
        a[2],
        a[3],
        key("split", "test", "split holding the explained patient"),
        key("patient", "", "patient id; empty picks the first of the split"),
        key("k", "200", "expected-gradients samples"),
        key("background", "200", "training grids in the background set"),
        key("layer", "0", "attention layer to render"),
        key("head", "mean", "attention head index or mean"),
    ]
};

pub const CLUSTER: [Key; 12] = [
    DATA,
    key("checkpoint", "out/adapt", "model whose embeddings are clustered"),
    key("detail_checkpoint", "", "model used for the second pass; empty reuses checkpoint"),
    key("cluster_dim", "10", "reduced dimension used for clustering"),
    key("n_neighbors", "100", "neighbourhood size of a manifold reducer"),
    key("min_dist", "0.0", "minimum distance of a manifold reducer"),
    key("min_cluster_size", "100", "smaller clusters become noise"),
    key("min_samples", "10", "neighbours of a core point"),
    key("epsilon", "auto", "neighbourhood radius or auto for the k-distance knee"),
    key("subcluster", "none", "cluster id for a second pass, or none"),
    key("sub_min_cluster_size", "50", "min_cluster_size of the second pass"),
    key("sub_min_samples", "10", "min_samples of the second pass"),
];

pub const ABLATE: [Key; 12] = {
    let a = task_keys!();
    let t = train_keys!("0.001", "6");
    [
        a[0],
        a[1],
        a[2],
        a[3],
        key("arms", "all", "comma-separated arm names or all"),
        t[0],
        t[1],
        t[2],
        t[3],
        t[4],
        t[5],
        t[6],
    ]
};

/// One-line outcome of a command.
pub type Summary = String;

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn journeys_path(data: &Path, split: Split) -> PathBuf {
    data.join(format!("journeys_{}.jsonl", split.name()))
}

fn labels_path(data: &Path, split: Split) -> PathBuf {
    data.join(format!("labels_{}.csv", split.name()))
}

fn parse_split(s: &Settings) -> Result<Split> {
    Ok(match s.choice("split", &["train", "validation", "test"])? {
        "train" => Split::Train,
        "validation" => Split::Validation,
        _ => Split::Test,
    })
}

fn read_split(data: &Path, split: Split) -> Result<Vec<PatientJourney>> {
    let raw = read_journeys(&journeys_path(data, split))?;
    let (journeys, rejected) = normalize_all(&raw);
    if rejected > 0 {
        log::warn!("{}: {rejected} journeys rejected", split.name());
    }
    Ok(journeys)
}

/// Labels of one task from one split's own file.
fn read_task_labels(data: &Path, split: Split, task: &str) -> Result<BTreeMap<String, bool>> {
    let path = labels_path(data, split);
    let labels = labels_for_task(&read_labels(&path)?, task);
    if labels.is_empty() {
        return Err(Error::Data {
            path,
            record: 0,
            message: format!("no labels for task `{task}`"),
        });
    }
    Ok(labels)
}

struct Model {
    params: ModelParams,
    vocab: Vocabulary,
    encoder: EncoderConfig,
}

fn load_model(dir: &Path) -> Result<Model> {
    let read = |name: &str| -> Result<String> {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::Data {
            path: p,
            record: 0,
            message: e.to_string(),
        })
    };
    let params = load_params(&dir.join("model.bin"))?;
    let vocab: Vocabulary = serde_json::from_str(&read("vocab.json")?)?;
    let encoder: EncoderConfig = serde_json::from_str(&read("encoder.json")?)?;
    if params.config.m != encoder.m || params.config.vocab_sizes != table_sizes(&vocab, encoder.m) {
        return Err(Error::ConfigMismatch(format!("{} does not match its vocabulary or encoder", dir.display())));
    }
    Ok(Model { params, vocab, encoder })
}

fn save_model(dir: &Path, params: &ModelParams, vocab: &Vocabulary, encoder: &EncoderConfig) -> Result<()> {
    save_params(params, &dir.join("model.bin"))?;
    write_json(&dir.join("vocab.json"), vocab)?;
    write_json(&dir.join("encoder.json"), encoder)
}

fn train_config(s: &Settings, objective: Objective) -> Result<TrainConfig> {
    let warmup = match s.choice("warmup", &["linear", "none"])? {
        "linear" => Warmup::DEFAULT,
        _ => Warmup::None,
    };
    let loss = match s.choice("loss", &["cross_entropy", "focal"])? {
        "cross_entropy" => LossKind::CrossEntropy,
        _ => LossKind::Focal {
            gamma: s.get("gamma")?,
            alpha: s.optional("alpha")?,
        },
    };
    let cfg = TrainConfig {
        lr: s.get("lr")?,
        loss,
        warmup,
        epochs: s.get("epochs")?,
        batch_size: s.get("batch_size")?,
        objective,
        seed: s.get("seed")?,
    };
    cfg.validate().map_err(|e| Error::Usage {
        key: "train".into(),
        message: e.to_string(),
    })?;
    Ok(cfg)
}

fn window(s: &Settings) -> Result<TaskWindow> {
    s.str("window").parse()
}

/// First cancer code of the journey, the group of the per-group rows.
fn cancer_group(j: &PatientJourney) -> String {
    j.visits
        .iter()
        .flat_map(|v| v.diagnoses.iter())
        .find(|c| c.starts_with(CANCER_PREFIX))
        .cloned()
        .unwrap_or_else(|| "none".into())
}

fn task_examples(
    s: &Settings,
    model: &Model,
    split: Split,
    include: Option<ChannelFlags>,
) -> Result<(Vec<Example>, usize)> {
    let data = s.path("data");
    let journeys = read_split(&data, split)?;
    let labels = read_task_labels(&data, split, s.str("task"))?;
    let enc = EncoderConfig {
        include: include.unwrap_or(model.encoder.include),
        ..model.encoder.clone()
    };
    let prepared = prepare_examples(&journeys, &labels, &window(s)?, &model.vocab, &enc)?;
    let groups: BTreeMap<&str, String> = journeys.iter().map(|j| (j.patient_id.as_str(), cancer_group(j))).collect();
    let examples = prepared
        .examples
        .into_iter()
        .map(|mut e| {
            e.group = groups.get(e.patient_id.as_str()).cloned();
            e
        })
        .collect();
    Ok((examples, prepared.window_empty))
}

pub fn generate(s: &Settings, out: &Path) -> Result<Summary> {
    let patients: usize = s.get("patients")?;
    let ratios: Vec<f64> = s.list("ratios")?;
    let ratios: [f64; 3] = ratios.try_into().map_err(|_| Error::Usage {
        key: "ratios".into(),
        message: "expected three fractions".into(),
    })?;
    let seed = s.get("seed")?;
    let cohort = generate_cohort(&CohortSpec::oncology(patients, seed))?;
    let split = split_cohort(&cohort.journeys, ratios, s.get("split_seed")?)?;
    let assignment = split.assignment();
    for part in SPLITS {
        write_journeys(&journeys_path(out, part), split.get(part))?;
        let rows: Vec<_> = cohort
            .labels
            .iter()
            .filter(|r| assignment.get(&r.patient_id) == Some(&part))
            .cloned()
            .collect();
        write_labels(&labels_path(out, part), &rows)?;
    }
    write_truth(&out.join("truth.csv"), &cohort.truth)?;
    Ok(format!(
        "generated {} patients: {} train, {} validation, {} test",
        cohort.journeys.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    ))
}

pub fn cmd_pretrain(s: &Settings, out: &Path) -> Result<Summary> {
    let data = s.path("data");
    let train = filter_pretrain_cohort(read_split(&data, Split::Train)?);
    let validation = filter_pretrain_cohort(read_split(&data, Split::Validation)?);
    if train.is_empty() {
        return Err(Error::EmptyCohort("no training journey qualifies for pre-training".into()));
    }
    let vocab = Vocabulary::build(&train);
    let mut enc = EncoderConfig::new(s.get("m")?);
    enc.percentile = s.get("percentile")?;
    enc.include = match s.choice("channels", &["all", "diagnosis_only"])? {
        "all" => ChannelFlags::ALL,
        _ => ChannelFlags::DIAGNOSIS_ONLY,
    };
    let enc = enc.fitted(&train)?;
    let config = ModelConfig {
        d_model: s.get("d_model")?,
        n_layers: s.get("n_layers")?,
        n_heads: s.get("n_heads")?,
        ff: s.get("ff")?,
        dropout: s.get("dropout")?,
        vocab_sizes: table_sizes(&vocab, enc.m),
        m: enc.m,
        n_proc: enc.n_proc.unwrap_or(1),
        n_lab: enc.n_lab.unwrap_or(1),
    };
    config.validate().map_err(|e| Error::Usage {
        key: "model".into(),
        message: e.to_string(),
    })?;
    let objective = match s.choice("objective", &["mlm", "mlm_plos"])? {
        "mlm" => Objective::Mlm,
        _ => Objective::MlmPlos,
    };
    let cfg = train_config(s, objective)?;
    let params = ModelParams::init(&config, s.get("init_seed")?)?;
    let tr = pretrain_examples(&train, &vocab, &enc)?;
    let va = pretrain_examples(&validation, &vocab, &enc)?;
    let outcome = pretrain(params, &tr, &va, &vocab, &cfg)?;
    save_model(out, &outcome.params, &vocab, &enc)?;
    write_log(&out.join("pretrain_log.csv"), &outcome.log)?;
    Ok(format!(
        "pre-trained on {} journeys; best epoch {} with validation precision {:.4}",
        tr.len(),
        outcome.best_epoch,
        outcome.best_precision
    ))
}

pub fn cmd_adapt(s: &Settings, out: &Path) -> Result<Summary> {
    let data = s.path("data");
    let model = load_model(&s.path("checkpoint"))?;
    let train = filter_pretrain_cohort(read_split(&data, Split::Train)?);
    let validation = filter_pretrain_cohort(read_split(&data, Split::Validation)?);
    let cfg = train_config(s, Objective::Mlm)?;
    let tr = pretrain_examples(&train, &model.vocab, &model.encoder)?;
    let va = pretrain_examples(&validation, &model.vocab, &model.encoder)?;
    let filter = CodeFilter::prefix(s.str("prefix"));
    let outcome = adapt_pretrain(model.params, &tr, &va, &model.vocab, &cfg, &filter)?;
    save_model(out, &outcome.params, &model.vocab, &model.encoder)?;
    write_log(&out.join("adapt_log.csv"), &outcome.log)?;
    Ok(format!(
        "adapted on `{}` codes; best epoch {} with validation precision {:.4}",
        s.str("prefix"),
        outcome.best_epoch,
        outcome.best_precision
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub task: String,
    pub split: String,
    pub window: String,
    /// Patients without the window's index event, left out.
    pub window_empty: usize,
    pub metrics: BinaryMetrics,
    pub groups: Vec<GroupMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shuffle: Option<PurityReport>,
}

fn eval_report(
    s: &Settings,
    params: &ModelParams,
    examples: &[Example],
    split: Split,
    window_empty: usize,
) -> Result<(EvalReport, Vec<f64>)> {
    let probs = predict(params, examples)?;
    let labels: Vec<bool> = examples.iter().map(|e| e.label.unwrap_or(false)).collect();
    let groups: Vec<String> = examples.iter().map(|e| e.group.clone().unwrap_or_default()).collect();
    Ok((
        EvalReport {
            task: s.str("task").into(),
            split: split.name().into(),
            window: window(s)?.to_string(),
            window_empty,
            metrics: binary_metrics(&probs, &labels)?,
            groups: group_metrics(&probs, &labels, &groups)?,
            shuffle: None,
        },
        probs,
    ))
}

pub fn cmd_finetune(s: &Settings, out: &Path) -> Result<Summary> {
    let model = load_model(&s.path("checkpoint"))?;
    let (train, _) = task_examples(s, &model, Split::Train, None)?;
    let (validation, empty) = task_examples(s, &model, Split::Validation, None)?;
    let cfg = train_config(s, Objective::Classify)?;
    let outcome = finetune(model.params, &train, &validation, &cfg)?;
    save_model(out, &outcome.params, &model.vocab, &model.encoder)?;
    write_log(&out.join("finetune_log.csv"), &outcome.log)?;
    let (report, _) = eval_report(s, &outcome.params, &validation, Split::Validation, empty)?;
    write_json(&out.join("eval.json"), &report)?;
    Ok(format!(
        "fine-tuned `{}`; best epoch {} with validation auroc {}",
        s.str("task"),
        outcome.best_epoch,
        report.metrics.auroc.map_or("n/a".into(), |a| format!("{a:.4}"))
    ))
}

pub fn cmd_gridsearch(s: &Settings, out: &Path) -> Result<Summary> {
    let model = load_model(&s.path("checkpoint"))?;
    let (train, _) = task_examples(s, &model, Split::Train, None)?;
    let (validation, _) = task_examples(s, &model, Split::Validation, None)?;
    let base = TrainConfig {
        lr: 0.0,
        loss: LossKind::CrossEntropy,
        warmup: Warmup::DEFAULT,
        epochs: s.get("epochs")?,
        batch_size: s.get("batch_size")?,
        objective: Objective::Classify,
        seed: s.get("seed")?,
    };
    let grid = search_space(&s.list::<f64>("lrs")?);
    let outcome = grid_search(&model.params, &train, &validation, &base, &grid)?;
    write_log(&out.join("grid.csv"), &outcome.rows)?;
    save_model(out, &outcome.params, &model.vocab, &model.encoder)?;
    let best = &outcome.rows[outcome.best];
    Ok(format!(
        "searched {} grid points; best lr {} loss {} warmup {} (validation aps {})",
        outcome.rows.len(),
        best.lr,
        best.loss,
        best.warmup,
        best.validation_aps.map_or("n/a".into(), |a| format!("{a:.4}"))
    ))
}

pub fn cmd_eval(s: &Settings, out: &Path) -> Result<Summary> {
    let model = load_model(&s.path("checkpoint"))?;
    let split = parse_split(s)?;
    let (examples, empty) = task_examples(s, &model, split, None)?;
    let (mut report, probs) = eval_report(s, &model.params, &examples, split, empty)?;
    let n_shuffle: usize = s.get("shuffle_patients")?;
    if n_shuffle > 0 {
        let w = window(s)?;
        let journeys: Vec<PatientJourney> = read_split(&s.path("data"), split)?
            .iter()
            .filter_map(|j| w.apply(j))
            .take(n_shuffle)
            .collect();
        report.shuffle = Some(shuffle_purity(
            &model.params,
            &journeys,
            &model.vocab,
            &model.encoder,
            s.get("shuffle_repeats")?,
            s.get("seed")?,
        )?);
    }
    write_json(&out.join("eval.json"), &report)?;
    let mut w = csv::Writer::from_path(out.join("predictions.csv"))?;
    w.write_record(["patient_id", "label", "probability", "group"])?;
    for (e, p) in examples.iter().zip(&probs) {
        w.write_record([
            e.patient_id.clone(),
            u8::from(e.label.unwrap_or(false)).to_string(),
            format!("{p:.6}"),
            e.group.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(format!(
        "{} on {}: auroc {} aps {} over {} patients",
        report.task,
        report.split,
        report.metrics.auroc.map_or("n/a".into(), |a| format!("{a:.4}")),
        report.metrics.aps.map_or("n/a".into(), |a| format!("{a:.4}")),
        report.metrics.n
    ))
}

pub fn cmd_attribute(s: &Settings, out: &Path) -> Result<Summary> {
    let model = load_model(&s.path("checkpoint"))?;
    let data = s.path("data");
    let w = window(s)?;
    let split = parse_split(s)?;
    let journeys = read_split(&data, split)?;
    let wanted = s.str("patient");
    let target = journeys
        .iter()
        .filter(|j| wanted.is_empty() || j.patient_id == wanted)
        .find_map(|j| w.apply(j))
        .ok_or_else(|| Error::Usage {
            key: "patient".into(),
            message: format!("no patient `{wanted}` with a non-empty window in {}", split.name()),
        })?;
    let grid = encode(&target, &model.vocab, &model.encoder)?;

    let train: Vec<SlotGrid> = read_split(&data, Split::Train)?
        .iter()
        .filter_map(|j| w.apply(j))
        .map(|j| encode(&j, &model.vocab, &model.encoder))
        .collect::<Result<_>>()?;
    if train.is_empty() {
        return Err(Error::EmptyBackground);
    }
    let seed: u64 = s.get("seed")?;
    let size = s.get::<usize>("background")?.min(train.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB6);
    let mut picked = sample(&mut rng, train.len(), size).into_vec();
    picked.sort_unstable();
    let background: Vec<SlotGrid> = picked.iter().map(|&i| train[i].clone()).collect();

    let checkpoint = s.str("checkpoint");
    let report = expected_gradients(&model.params, &grid, &background, s.get("k")?, seed, &target.patient_id, checkpoint)?;
    write_json(&out.join("attribution.json"), &report)?;
    attribution_heatmap(&report, &grid, &model.vocab).write_svg(&out.join("attribution.svg"))?;
    fs::write(out.join("slots.csv"), slot_table_csv(&grid, &model.vocab, Some(&report))?)?;

    let layer: usize = s.get("layer")?;
    let map = attention_map(&model.params, &grid, layer)?;
    let head = match s.str("head") {
        "mean" => None,
        _ => {
            let h: usize = s.get("head")?;
            if h >= model.params.config.n_heads {
                return Err(Error::Usage {
                    key: "head".into(),
                    message: format!("model has {} heads", model.params.config.n_heads),
                });
            }
            Some(h)
        }
    };
    attention_heatmap(&map, &grid, &model.vocab, head).write_svg(&out.join(format!("attention_layer{layer}.svg")))?;
    let (top, value) = report
        .features
        .iter()
        .fold((None, f64::NEG_INFINITY), |b, (c, v)| if *v > b.1 { (Some(*c), *v) } else { b });
    Ok(format!(
        "explained {} over {} columns; strongest channel {} ({value:.4e})",
        target.patient_id,
        report.width,
        top.map_or("-", |c| c.name())
    ))
}

fn density(s: &Settings, size_key: &str, samples_key: &str) -> Result<DensityParams> {
    Ok(DensityParams {
        min_cluster_size: s.get(size_key)?,
        min_samples: s.get(samples_key)?,
        epsilon: match s.str("epsilon") {
            "auto" => None,
            _ => Some(s.get("epsilon")?),
        },
    })
}

fn write_cluster_run(out: &Path, prefix: &str, run: &ClusterRun) -> Result<()> {
    write_json(&out.join(format!("{prefix}report.json")), &run.report)?;
    fs::write(out.join(format!("{prefix}clusters.csv")), run.report.table_csv()?)?;
    fs::write(out.join(format!("{prefix}subtypes.csv")), run.report.stats_csv()?)?;
    fs::write(out.join(format!("{prefix}scatter.svg")), scatter_svg(&run.report))?;
    Ok(())
}

pub fn cmd_cluster(s: &Settings, out: &Path) -> Result<Summary> {
    let model = load_model(&s.path("checkpoint"))?;
    let data = s.path("data");
    let mut journeys = Vec::new();
    for part in SPLITS {
        journeys.extend(read_split(&data, part)?);
    }
    let cfg = ClusterConfig {
        cluster_dim: s.get("cluster_dim")?,
        reduce: ReduceParams {
            n_neighbors: s.get("n_neighbors")?,
            min_dist: s.get("min_dist")?,
        },
        density: density(s, "min_cluster_size", "min_samples")?,
        seed: s.get("seed")?,
    };
    let emb = extract_embeddings(&model.params, &journeys, &model.vocab, &model.encoder)?;
    let run = cluster_embeddings(&emb, &journeys, &cfg)?;
    write_cluster_run(out, "", &run)?;
    let mut summary = format!(
        "{} clusters over {} patients, {} noise",
        run.report.clusters.len(),
        journeys.len(),
        run.report.noise
    );
    if let Some(id) = s.optional::<i64>("subcluster")? {
        let detail = match s.str("detail_checkpoint") {
            "" => emb,
            dir => {
                let m = load_model(Path::new(dir))?;
                extract_embeddings(&m.params, &journeys, &m.vocab, &m.encoder)?
            }
        };
        let sub_cfg = ClusterConfig {
            density: density(s, "sub_min_cluster_size", "sub_min_samples")?,
            ..cfg
        };
        let sub = subcluster(&detail, &journeys, &run.assignments, id, &sub_cfg)?;
        write_cluster_run(out, &format!("sub{id}_"), &sub)?;
        summary.push_str(&format!("; cluster {id} splits into {}", sub.report.clusters.len()));
    }
    Ok(summary)
}

pub fn cmd_ablate(s: &Settings, out: &Path) -> Result<Summary> {
    let model = load_model(&s.path("checkpoint"))?;
    let data = s.path("data");
    let task = s.str("task");
    let labels: BTreeMap<String, bool> = [Split::Train, Split::Validation, Split::Test]
        .into_iter()
        .map(|p| read_task_labels(&data, p, task))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let (train, validation, test) = (
        read_split(&data, Split::Train)?,
        read_split(&data, Split::Validation)?,
        read_split(&data, Split::Test)?,
    );
    let w = window(s)?;
    let wanted: Vec<String> = s.list("arms")?;
    let arms: Vec<_> = standard_arms()
        .into_iter()
        .filter(|a| wanted.iter().any(|w| w == "all" || *w == a.name))
        .collect();
    if arms.is_empty() {
        return Err(Error::Usage {
            key: "arms".into(),
            message: "no known arm selected".into(),
        });
    }
    let cfg = train_config(s, Objective::Classify)?;
    let rows = ablation_run(
        &arms,
        &TaskData {
            task,
            window: &w,
            labels: &labels,
            train: &train,
            validation: &validation,
            test: &test,
        },
        &model.vocab,
        &model.encoder,
        &model.params,
        &cfg,
    )?;
    write_log(&out.join("ablation.csv"), &rows)?;
    let parts: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {}", r.arm, r.auroc.map_or("n/a".into(), |a| format!("{a:.4}"))))
        .collect();
    Ok(format!("ablation test auroc: {}", parts.join(", ")))
}
