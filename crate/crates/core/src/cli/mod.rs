//! The `exbehrt` command line.

mod commands;
mod settings;

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use commands::EvalReport;
pub use settings::{describe, Key, Settings, COMMON};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "exbehrt", version, about = "Slot-grid transformer for multimodal patient journeys")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON object of settings
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default 1)
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort with per-split journey and label files
    #[command(after_help = describe(&commands::GENERATE))]
    Generate(Common),
    /// Masked-diagnosis pre-training from scratch
    #[command(after_help = describe(&commands::PRETRAIN))]
    Pretrain(Common),
    /// Second pre-training pass masking only codes with a given prefix
    #[command(after_help = describe(&commands::ADAPT))]
    Adapt(Common),
    /// Fine-tune a binary task, selecting the epoch by validation APS
    #[command(after_help = describe(&commands::FINETUNE))]
    Finetune(Common),
    /// Learning rate × loss × warmup search on the validation split
    #[command(after_help = describe(&commands::GRIDSEARCH))]
    Gridsearch(Common),
    /// Expected-gradients attribution and attention maps for one patient
    #[command(after_help = describe(&commands::ATTRIBUTE))]
    Attribute(Common),
    /// Cluster patient embeddings and describe the clusters
    #[command(after_help = describe(&commands::CLUSTER))]
    Cluster(Common),
    /// Feature-channel ablation on one task
    #[command(after_help = describe(&commands::ABLATE))]
    Ablate(Common),
    /// Evaluate a fine-tuned model on one split
    #[command(after_help = describe(&commands::EVAL))]
    Eval(Common),
}

type Handler = fn(&Settings, &std::path::Path) -> Result<String>;

impl Command {
    fn parts(&self) -> (&'static str, &'static [Key], Handler, &Common) {
        match self {
            Command::Generate(c) => ("generate", &commands::GENERATE, commands::generate, c),
            Command::Pretrain(c) => ("pretrain", &commands::PRETRAIN, commands::cmd_pretrain, c),
            Command::Adapt(c) => ("adapt", &commands::ADAPT, commands::cmd_adapt, c),
            Command::Finetune(c) => ("finetune", &commands::FINETUNE, commands::cmd_finetune, c),
            Command::Gridsearch(c) => ("gridsearch", &commands::GRIDSEARCH, commands::cmd_gridsearch, c),
            Command::Attribute(c) => ("attribute", &commands::ATTRIBUTE, commands::cmd_attribute, c),
            Command::Cluster(c) => ("cluster", &commands::CLUSTER, commands::cmd_cluster, c),
            Command::Ablate(c) => ("ablate", &commands::ABLATE, commands::cmd_ablate, c),
            Command::Eval(c) => ("eval", &commands::EVAL, commands::cmd_eval, c),
        }
    }
}

fn execute(command: &Command) -> Result<String> {
    let (name, keys, handler, common) = command.parts();
    let settings = Settings::resolve(
        name,
        keys,
        common.config.as_deref(),
        &common.set,
        &[
            ("seed", common.seed.map(|v| v.to_string())),
            ("threads", common.threads.map(|v| v.to_string())),
            ("out", common.out.as_ref().map(|p| p.display().to_string())),
        ],
    )?;
    let threads: usize = settings.get("threads")?;
    if threads == 0 {
        return Err(Error::Usage {
            key: "threads".into(),
            message: "must be at least 1".into(),
        });
    }
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    let out = settings.path("out");
    fs::create_dir_all(&out)?;
    let mut config = serde_json::to_string_pretty(&settings.to_json())?;
    config.push('\n');
    fs::write(out.join("config.json"), config)?;
    log::info!("{name}: writing to {}", out.display());
    handler(&settings, &out)
}

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(buf, "{} {:<5} {}", buf.timestamp_millis(), record.level(), record.args())
        })
        .try_init();
}

/// Exit codes: 0 on success, 1 on usage errors, 2 on data errors.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging();
    match execute(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Usage { .. } => 1,
                _ => 2,
            })
        }
    }
}
