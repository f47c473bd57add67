//! `efpc`: the compression pipeline as subcommands.
//!
//! ```text
//! distill  corpus.jsonl  -> pairs.jsonl        (LLM or mock compression of chunks)
//! label    pairs.jsonl   -> labeled.jsonl      (word-level keep/drop labels)
//! train    labeled.jsonl -> model.ckpt         (fresh, --init incremental, --mix-agnostic joint)
//! compress model.ckpt + text -> record.json
//! eval     model.ckpt + labeled.jsonl | qa.jsonl -> report.json
//! sweep    data-efficiency or alpha-mixing grid -> cell reports + summary.tsv
//! stats    pairs.jsonl   -> ratio histogram on stdout
//! ```
//!
//! Exit codes: 0 success, 1 user error (bad flags, config, inputs),
//! 2 runtime failure.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use efpc_core::encoder::LossVariant;
use thiserror::Error;

pub use config::{load_config, ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// Missing or malformed input supplied by the user.
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "efpc", version, about = "Instruction-aware extractive prompt compression")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compress corpus chunks with an LLM (or the mock) into a pair dataset.
    Distill(DistillArgs),
    /// Align pairs into word-level labels.
    Label(LabelArgs),
    /// Train a compressor checkpoint.
    Train(TrainArgs),
    /// Compress one text file.
    Compress(CompressArgs),
    /// Evaluate a checkpoint on labeled data or downstream QA.
    Eval(EvalArgs),
    /// Data-efficiency or alpha-mixing sweep.
    Sweep(SweepArgs),
    /// Compression-ratio histogram of a pair dataset.
    Stats(StatsArgs),
}

#[derive(Args, Debug, Default)]
pub struct ProviderArgs {
    /// Call the configured HTTP endpoint (needs EFPC_API_KEY).
    #[arg(long, conflicts_with = "mock")]
    pub live: bool,
    /// Use the deterministic built-in mock.
    #[arg(long)]
    pub mock: bool,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model_name: Option<String>,
    #[arg(long)]
    pub concurrency: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Send every request without its instruction (task-agnostic data).
    #[arg(long)]
    pub no_instruction: bool,
    #[arg(long)]
    pub max_units: Option<usize>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Args, Debug)]
pub struct LabelArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub loss: Option<LossVariant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Labeled examples.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint (incremental training).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Task-agnostic labeled examples to mix in (joint training).
    #[arg(long)]
    pub mix_agnostic: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub total: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub num_layers: Option<usize>,
    #[arg(long)]
    pub num_heads: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct TargetArgs {
    /// Keep fraction in (0, 1].
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Absolute number of words to keep.
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CompressArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Plain-text file to compress.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "")]
    pub instruction: String,
    /// Write the record here (and a manifest next to it) instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("eval_data").required(true).args(["labeled", "qa"])))]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Labeled examples: reports token accuracy.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// QA items `{"context","question","gold_answers"}`: compresses each
    /// context and scores the target LLM's answers.
    #[arg(long)]
    pub qa: Option<PathBuf>,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Score without feeding instructions (questions) to the compressor.
    #[arg(long)]
    pub no_instruction: bool,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Starting checkpoint (required for the fraction sweep).
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Extra labeled data for the fraction sweep.
    #[arg(long)]
    pub extra: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Task-aware labeled data for the alpha sweep.
    #[arg(long, requires = "agnostic")]
    pub aware: Option<PathBuf>,
    #[arg(long, requires = "aware")]
    pub agnostic: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long)]
    pub total: Option<usize>,
    /// Labeled evaluation set.
    #[arg(long)]
    pub eval: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Also write the summary to this file (with a manifest).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn apply_provider(c: &mut RunConfig, p: &ProviderArgs) {
    if p.live {
        c.provider.mock = false;
    }
    if p.mock {
        c.provider.mock = true;
    }
    if let Some(v) = &p.base_url {
        c.provider.base_url = v.clone();
    }
    if let Some(v) = &p.model_name {
        c.provider.model_name = v.clone();
    }
    if let Some(v) = p.concurrency {
        c.provider.concurrency = v;
    }
}

fn apply_train(c: &mut RunConfig, t: &TrainFlags) {
    if let Some(v) = t.loss {
        c.train.loss = v;
    }
    if let Some(v) = t.epochs {
        c.train.epochs = v;
    }
    if let Some(v) = t.lr {
        c.train.learning_rate = v;
    }
    if let Some(v) = t.batch_size {
        c.train.batch_size = v;
    }
}

/// Command-line targets replace the file's target entirely, so a file
/// `ratio` does not clash with a flag `--budget`.
fn apply_target(c: &mut RunConfig, t: &TargetArgs) {
    if t.ratio.is_some() || t.budget.is_some() {
        c.compress.ratio = t.ratio;
        c.compress.budget = t.budget;
    }
}

/// File values (or defaults) with this invocation's flags applied, validated.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut c = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    match &cli.command {
        Command::Distill(a) => {
            apply_provider(&mut c, &a.provider);
            if a.corpus.is_some() {
                c.paths.corpus = a.corpus.clone();
            }
            if a.no_instruction {
                c.distill.instructions = efpc_core::distill::InstructionSource::None;
            }
            if let Some(v) = a.max_units {
                c.distill.max_units = v;
            }
        }
        Command::Label(a) => {
            if a.dataset.is_some() {
                c.paths.dataset = a.dataset.clone();
            }
        }
        Command::Train(a) => {
            apply_train(&mut c, &a.train);
            if a.data.is_some() {
                c.paths.labeled = a.data.clone();
            }
            if a.alpha.is_some() {
                c.train.alpha = a.alpha;
            }
            if a.total.is_some() {
                c.train.total = a.total;
            }
            let m = &mut c.model;
            for (flag, field) in [
                (a.embed_dim, &mut m.embed_dim),
                (a.num_layers, &mut m.num_layers),
                (a.num_heads, &mut m.num_heads),
                (a.ffn_dim, &mut m.ffn_dim),
                (a.max_seq_len, &mut m.max_seq_len),
            ] {
                if let Some(v) = flag {
                    *field = v;
                }
            }
        }
        Command::Compress(a) => {
            apply_target(&mut c, &a.target);
            if a.checkpoint.is_some() {
                c.paths.checkpoint = a.checkpoint.clone();
            }
        }
        Command::Eval(a) => {
            apply_target(&mut c, &a.target);
            apply_provider(&mut c, &a.provider);
            if a.checkpoint.is_some() {
                c.paths.checkpoint = a.checkpoint.clone();
            }
        }
        Command::Sweep(a) => {
            apply_train(&mut c, &a.train);
            if let Some(v) = &a.fractions {
                c.eval.fractions = v.clone();
            }
            if let Some(v) = &a.alphas {
                c.eval.alphas = v.clone();
            }
            if a.total.is_some() {
                c.train.total = a.total;
            }
            if a.base.is_some() {
                c.paths.checkpoint = a.base.clone();
            }
        }
        Command::Stats(a) => {
            if a.dataset.is_some() {
                c.paths.dataset = a.dataset.clone();
            }
            if let Some(v) = a.bin_width {
                c.eval.bin_width = v;
            }
        }
    }
    c.validate()?;
    Ok(c)
}

/// Runs one invocation; `argv[0]` is the program name.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_cli_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

pub fn run_cli_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = effective_config(&cli).and_then(|config| commands::run(&cli.command, &config, stdout));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            e.exit_code()
        }
    }
}
