//! `sinv`: synthetic corpus generation, augmentation, feature extraction,
//! training, speaker adaptation, evaluation and grid search.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use sinv_core::{Error, ErrorKind};

#[derive(Debug, Parser)]
#[command(name = "sinv", version, about = "Acoustic-to-articulatory speech inversion")]
pub struct Cli {
    /// Root seed; every random choice in the command derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for per-utterance work. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// key=value file whose keys are this command's long flag names.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate a synthetic articulatory corpus with a speaker split.
    Synth(SynthArgs),
    /// Generate synthetic noise, music and impulse-response banks.
    SynthBanks(SynthBanksArgs),
    /// Add two augmented copies of every clean utterance.
    Augment(AugmentArgs),
    /// Write per-segment feature files and an index.
    Featurize(FeaturizeArgs),
    /// Train a model on the train split with early stopping on dev.
    Train(TrainArgs),
    /// Fine-tune a trained model on single speakers.
    Adapt(AdaptArgs),
    /// Score checkpoints on a test set.
    Evaluate(EvaluateArgs),
    /// Train one model per learning rate and batch size.
    Gridsearch(GridArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub speakers: usize,
    /// Utterances per speaker.
    #[arg(long, default_value_t = 40)]
    pub utts: usize,
    /// Utterance length in seconds.
    #[arg(long, default_value_t = 3.0)]
    pub duration: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthBanksArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// background_and_music, gaussian or room_ir.
    #[arg(long)]
    pub plan: String,
    /// Bank index file (kind, path).
    #[arg(long)]
    pub banks: Option<PathBuf>,
    #[arg(long, default_value_t = 5.0)]
    pub snr_low: f64,
    #[arg(long, default_value_t = 20.0)]
    pub snr_high: f64,
    /// Clip names (file stems) to leave out of the banks.
    #[arg(long, value_delimiter = ',', num_args = 1.., action = ArgAction::Set)]
    pub exclude: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// mfcc, mfcc_deltas or mspec.
    #[arg(long, default_value = "mfcc_deltas")]
    pub features: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// bigrnn or bilstm.
    #[arg(long, default_value = "bigrnn")]
    pub model: String,
    #[arg(long, default_value = "mfcc_deltas")]
    pub features: String,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long, default_value_t = 128)]
    pub dense_hidden: usize,
    /// tanh or linear.
    #[arg(long, default_value = "tanh")]
    pub dense_activation: String,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// mse, mae, ppmc or weighted:ALPHA.
    #[arg(long, default_value = "ppmc")]
    pub loss: String,
    /// sequence or pooled.
    #[arg(long, default_value = "sequence")]
    pub granularity: String,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 20)]
    pub warm_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub decay_every: usize,
    #[arg(long, default_value_t = 0.9)]
    pub decay_factor: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// clean or augmented.
    #[arg(long, default_value = "clean")]
    pub regime: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Speakers to adapt to, one model each.
    #[arg(long, value_delimiter = ',', num_args = 1.., action = ArgAction::Set, required = true)]
    pub speaker: Vec<String>,
    #[arg(long, default_value = "ppmc")]
    pub loss: String,
    #[arg(long, default_value = "sequence")]
    pub granularity: String,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 30)]
    pub patience: usize,
    /// Parameter name prefixes kept fixed, e.g. rnn0,rnn1.
    #[arg(long, value_delimiter = ',', num_args = 1.., action = ArgAction::Set)]
    pub freeze: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_delimiter = ',', num_args = 1.., action = ArgAction::Set, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// clean, augmented or clean_plus_augmented.
    #[arg(long, default_value = "clean")]
    pub test_set: String,
    /// Also score every checkpoint on each augmentation plan's copies.
    #[arg(long)]
    pub by_plan: bool,
    /// Utterance whose per-frame predictions go to trajectories.csv.
    #[arg(long)]
    pub trajectory: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "clean")]
    pub regime: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_delimiter = ',', num_args = 1.., action = ArgAction::Set, default_values_t = sinv_core::training::DEFAULT_LR_GRID)]
    pub lrs: Vec<f64>,
    #[arg(long, value_delimiter = ',', num_args = 1.., action = ArgAction::Set, default_values_t = sinv_core::training::DEFAULT_BATCH_GRID)]
    pub batch_sizes: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_DIVERGENCE: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => EXIT_CONFIG,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Numerical => EXIT_DIVERGENCE,
    }
}

fn main() -> ExitCode {
    let command = Cli::command().args_override_self(true);
    let argv = match config::expand(&command, std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let matches = match command.clone().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let resolved = config::resolved(&command, &matches);
    match commands::run(&cli, &resolved) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
