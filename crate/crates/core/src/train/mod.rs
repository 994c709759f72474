//! Pre-training, fine-tuning, optimization and evaluation.

pub mod loss;
pub mod masking;
pub mod metrics;
pub mod optim;
pub mod search;
pub mod trainer;

pub use loss::{focal_loss, mlm_loss, LossKind};
pub use masking::{make_masking_plan, plan_with_rng, CodeFilter, MaskAction, MaskingPlan};
pub use metrics::{
    auroc, average_precision, balanced_accuracy, binary_metrics, group_metrics, precision_at, BinaryMetrics,
    GroupMetrics, MlmMetrics,
};
pub use optim::{learning_rate, BertAdam, Warmup};
pub use search::{
    ablation_run, grid_search, grid_losses, search_space, shuffle_purity, standard_arms, AblationArm, AblationRow, GridOutcome, GridPoint, GridRow, PatientPurity, PurityReport,
    TaskData, PAPER_LEARNING_RATES,
};
pub use trainer::{
    adapt_pretrain, evaluate, finetune, predict, predict_logits, prepare_examples, pretrain, pretrain_examples,
    write_log, evaluate_mlm, Example, FinetuneOutcome, FinetuneRow, Objective, Prepared, PretrainOutcome, PretrainRow, TrainConfig,
};
