use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sgncap::commands::{self, CaptionOptions};
use sgncap::kv::{self, KvMap};
use sgncap::Error;
use sgncap_core::model::Variant;
use sgncap_core::training::Optimizer;

#[derive(Parser)]
#[command(name = "sgncap", version, about = "Attention captioning with a sequential guiding network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic grid-scene dataset.
    GenerateData(GenerateArgs),
    /// Train a model; logs every step and checkpoints every epoch.
    Train(TrainArgs),
    /// Score candidate captions against references (CSV row, ×100).
    Evaluate(EvaluateArgs),
    /// Caption every record of a split, one sentence per line.
    Caption(CaptionArgs),
    /// Compare backprop gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Print the per-step alignment weights of one record as CSV.
    InspectAttention(InspectArgs),
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Flat key=value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    max_objects: Option<usize>,
    #[arg(long)]
    attr_dim: Option<usize>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
struct TrainArgs {
    /// Dataset directory written by generate-data.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path, rewritten after every epoch.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also append the training log to this file.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    guide_dim: Option<usize>,
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    guide_input_dim: Option<usize>,
    #[arg(long)]
    regions: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    attr_dim: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    candidate_tanh: Option<bool>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    #[arg(long)]
    max_decode_len: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    optimizer: Option<Optimizer>,
    #[arg(long)]
    grad_clip_norm: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
struct EvaluateArgs {
    /// One candidate caption per line.
    #[arg(long)]
    candidates: PathBuf,
    /// References in "IMG <id>" blocks.
    #[arg(long)]
    references: PathBuf,
    /// Print a header line before the scores.
    #[arg(long)]
    header: bool,
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
struct CaptionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Beam width; greedy decoding when absent.
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    length_normalize: bool,
    #[arg(long)]
    max_decode_len: Option<usize>,
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
struct GradcheckArgs {
    #[arg(long, default_value = "sgn")]
    variant: Variant,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 0)]
    index: usize,
}

fn flags<const N: usize>(pairs: [(&str, Option<String>); N]) -> KvMap {
    pairs
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
        .collect()
}

fn s<T: ToString>(v: Option<T>) -> Option<String> {
    v.map(|v| v.to_string())
}

/// Writes to stdout and, optionally, a log file.
struct Tee {
    file: Option<std::fs::File>,
}

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stdout().write_all(buf)?;
        if let Some(f) = &mut self.file {
            f.write_all(buf)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        std::io::stdout().flush()
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::GenerateData(a) => {
            let f = flags([
                ("n_train", s(a.n_train)),
                ("n_val", s(a.n_val)),
                ("n_test", s(a.n_test)),
                ("rows", s(a.rows)),
                ("cols", s(a.cols)),
                ("feature_dim", s(a.feature_dim)),
                ("noise_std", s(a.noise_std)),
                ("max_objects", s(a.max_objects)),
                ("attr_dim", s(a.attr_dim)),
                ("min_count", s(a.min_count)),
                ("seed", s(a.seed)),
            ]);
            let gen = commands::generate_data(&a.out, &kv::merge(a.config.as_deref(), f)?)?;
            eprintln!(
                "wrote {} / {} / {} records to {}",
                gen.n_train,
                gen.n_val,
                gen.n_test,
                a.out.display()
            );
        }
        Command::Train(a) => {
            let f = flags([
                ("variant", s(a.variant)),
                ("hidden_dim", s(a.hidden_dim)),
                ("guide_dim", s(a.guide_dim)),
                ("word_dim", s(a.word_dim)),
                ("input_dim", s(a.input_dim)),
                ("guide_input_dim", s(a.guide_input_dim)),
                ("regions", s(a.regions)),
                ("feature_dim", s(a.feature_dim)),
                ("attr_dim", s(a.attr_dim)),
                ("vocab_size", s(a.vocab_size)),
                ("candidate_tanh", s(a.candidate_tanh)),
                ("dropout_rate", s(a.dropout_rate)),
                ("max_decode_len", s(a.max_decode_len)),
                ("learning_rate", s(a.learning_rate)),
                ("batch_size", s(a.batch_size)),
                ("epochs", s(a.epochs)),
                ("optimizer", s(a.optimizer)),
                ("grad_clip_norm", s(a.grad_clip_norm)),
                ("max_steps", s(a.max_steps)),
                ("seed", s(a.seed)),
            ]);
            let settings = kv::merge(a.config.as_deref(), f)?;
            let file = match &a.log {
                Some(p) => Some(std::fs::File::create(p).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?),
                None => None,
            };
            let mut tee = Tee { file };
            commands::train(&a.data, &a.out, &settings, &mut tee)?;
        }
        Command::Evaluate(a) => {
            let scores = commands::evaluate(&a.candidates, &a.references)?;
            let write = |out: &mut dyn Write, line: &str| {
                writeln!(out, "{line}").map_err(|e| Error::Io {
                    path: "<stdout>".into(),
                    source: e,
                })
            };
            if a.header {
                write(&mut stdout, commands::EVAL_HEADER)?;
            }
            write(&mut stdout, &commands::eval_row(&scores))?;
        }
        Command::Caption(a) => {
            let opts = CaptionOptions {
                split: a.split,
                beam: a.beam,
                length_normalize: a.length_normalize,
                max_decode_len: a.max_decode_len,
            };
            commands::caption(&a.checkpoint, &a.data, &opts, &mut stdout)?;
        }
        Command::Gradcheck(a) => return commands::gradcheck(a.variant, a.seed, a.epsilon, &mut stdout),
        Command::InspectAttention(a) => {
            commands::inspect_attention(&a.checkpoint, &a.data, &a.split, a.index, &mut stdout)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
