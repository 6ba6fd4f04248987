//! Command-line driver: corpus generation, training, adaptation, evaluation,
//! ablations and error analysis. Every command writes its outputs plus a
//! `manifest.json` into the directory given by `--out`.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::experiment::ModelKind;

#[derive(Debug, Parser)]
#[command(name = "zat", version, about = "Zero-shot slot tagging experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Experiment settings shared by every command that reads a corpus.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML experiment config; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus directory (overrides the config).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Target domain (overrides the config).
    #[arg(long)]
    pub target: Option<String>,
    /// Utterances per source domain (overrides the config).
    #[arg(long)]
    pub take: Option<usize>,
    /// Maximum base training epochs (overrides the config).
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Comma-separated seeds (overrides the config).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated target training sizes (overrides the config).
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic multi-domain corpus and its word vectors.
    GenData {
        /// TOML generator spec; the built-in grammar when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a base model on the source domains.
    TrainBase {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "zat")]
        model: ModelKind,
        /// Defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fine-tune a base checkpoint on `n` target utterances.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a baseline: the concept tagger on the sources, or the BiLSTM
    /// tagger from scratch on `n` target utterances.
    TrainBaseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: ModelKind,
        #[arg(long, default_value_t = 0)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on a target split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tag raw utterances, one whitespace-tokenized utterance per line.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and compare the full model against its -CRF, -CHAR and +WEFT variants.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Error rates by span position and length, and POS attribution of errors.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Only report POS tags seen at least this often.
        #[arg(long, default_value_t = 0)]
        min_frequency: usize,
        /// Only report POS tags whose error share reaches this value.
        #[arg(long, default_value_t = 0.0)]
        min_share: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the attention matrix of one utterance against one slot description.
    DumpAttention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        slot: String,
        /// Whitespace-tokenized utterance.
        #[arg(long)]
        text: String,
    },
    /// Learning curves over target sizes and seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "zat,ct,lstm")]
        models: Vec<ModelKind>,
    },
}

/// Parses `argv` and runs the command. Usage errors exit with 2, command
/// failures with 1.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
