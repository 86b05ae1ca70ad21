//! `waterfall`: embed, verify, extract and stress-test watermarks in token
//! streams from the command line.

mod cmd;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use util::{MuArg, ThresholdArg};

const EXIT_CODES: &str = "\
Exit codes:
  0   success
  2   partial success: some records failed (see error entries)
  64  usage error: bad or conflicting flags, invalid parameters
  65  data error: malformed input, manifest or model mismatch
  69  logit provider unavailable
  70  internal error
  74  file read or write error";

#[derive(Parser, Debug)]
#[command(name = "waterfall", version, about = "Keyed n-gram watermarking of token streams", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a toy Markov model and its vocabulary
    Train(TrainArgs),
    /// Watermark the records of a JSONL corpus
    Watermark(WatermarkArgs),
    /// Verify records against one watermark id
    Verify(VerifyArgs),
    /// Recover the perturbation key from watermarked records
    Extract(ExtractArgs),
    /// Verify every record against many watermark ids
    Scan(ScanArgs),
    /// Apply an edit attack to records
    Attack(AttackArgs),
    /// Run an evaluation experiment from a JSON config
    Eval(EvalArgs),
    /// Calibrate a score threshold on a null corpus
    Calibrate(CalibrateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Fourier,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    FisherYates,
    FeistelPrp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Multinomial,
    Greedy,
    Beam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AttackArg {
    Insert,
    Delete,
    Substitute,
    Overlap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EmitArg {
    Text,
    Tokens,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSONL corpus of text records [default: the bundled synthetic corpus]
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Seed of the synthetic corpus when --corpus is not given
    #[arg(long, default_value_t = waterfall_core::corpus::BUNDLED_SEED)]
    pub corpus_seed: u64,
    /// Approximate size in tokens of the synthetic corpus
    #[arg(long, default_value_t = waterfall_core::corpus::BUNDLED_TOKENS)]
    pub corpus_tokens: usize,
    /// Vocabulary cap, special tokens included
    #[arg(long, default_value_t = 4096)]
    pub vocab_size: usize,
    /// Markov order (tokens of context)
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    /// Additive smoothing
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Model file to write
    #[arg(long, short)]
    pub output: PathBuf,
}

/// Logit provider: a trained model, optionally replaced by a remote server
/// that shares its vocabulary.
#[derive(Args, Debug)]
pub struct ProviderArgs {
    /// Model file from `train`; supplies the vocabulary and the logits
    #[arg(long)]
    pub model: PathBuf,
    /// Base URL of a logit server to query instead of the model
    #[arg(long)]
    pub remote: Option<String>,
    /// Attempts per remote request
    #[arg(long, default_value_t = 3)]
    pub remote_attempts: u32,
    /// Weight of the in-context bigram cache mixed into the model, in [0, 1)
    #[arg(long, default_value_t = 0.0)]
    pub cache_weight: f64,
    /// Keep generating through end-of-sequence tokens until the length limit
    #[arg(long)]
    pub ignore_eos: bool,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    /// Perturbation key
    #[arg(long, default_value_t = 1, conflicts_with = "metadata")]
    pub k_p: u64,
    /// Hex metadata to derive the perturbation key from, instead of --k-p
    #[arg(long)]
    pub metadata: Option<String>,
    /// Perturbation strength in logit units
    #[arg(long, default_value_t = 6.0)]
    pub kappa: f64,
    /// N-gram length; the previous n-1 tokens key each permutation
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    /// Orthogonal basis family of the perturbation
    #[arg(long, value_enum, default_value_t = FamilyArg::Fourier)]
    pub family: FamilyArg,
    /// Vocabulary permutation generator
    #[arg(long, value_enum, default_value_t = BackendArg::FisherYates)]
    pub backend: BackendArg,
    /// Decoding strategy
    #[arg(long, value_enum, default_value_t = StrategyArg::Multinomial)]
    pub strategy: StrategyArg,
    /// Softmax temperature
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Nucleus sampling mass
    #[arg(long, default_value_t = 1.0)]
    pub top_p: f64,
    /// Hypotheses kept by beam search
    #[arg(long, default_value_t = 4)]
    pub beam_width: usize,
    /// Weight of the watermark term in the beam objective
    #[arg(long, default_value_t = 1.0)]
    pub beam_lambda: f64,
    /// Tokens to generate per record [default: the record's own length]
    #[arg(long)]
    pub max_tokens: Option<usize>,
}

#[derive(Args, Debug)]
pub struct WatermarkArgs {
    /// Input JSONL corpus, `-` for stdin
    #[arg(long, short, default_value = "-")]
    pub input: PathBuf,
    /// Output JSONL corpus, `-` for stdout
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
    /// Manifest file to write
    #[arg(long)]
    pub manifest: PathBuf,
    /// Watermark id as hex, or @FILE holding the hex
    #[arg(long)]
    pub mu: MuArg,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
    /// Write records as text or as token ids
    #[arg(long, value_enum, default_value_t = EmitArg::Text)]
    pub emit: EmitArg,
    /// Seed for all randomness
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
}

/// Verification setting: the manifest, optional overrides, and a model for
/// tokenizing text records.
#[derive(Args, Debug)]
pub struct CheckArgs {
    /// Manifest written by `watermark`
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model file whose vocabulary tokenizes text records
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Watermark id to check [default: the manifest's]
    #[arg(long)]
    pub mu: Option<MuArg>,
    /// Perturbation key to check [default: the manifest's]
    #[arg(long)]
    pub k_p: Option<u64>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Input JSONL corpus, `-` for stdin
    #[arg(long, short, default_value = "-")]
    pub input: PathBuf,
    /// Output JSONL, `-` for stdout
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
    #[command(flatten)]
    pub check: CheckArgs,
    /// Fixed score threshold, or fpr:RATE@NULL.jsonl to calibrate one
    #[arg(long)]
    pub threshold: ThresholdArg,
    /// Worker threads
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Input JSONL corpus, `-` for stdin
    #[arg(long, short, default_value = "-")]
    pub input: PathBuf,
    /// Output JSONL, `-` for stdout
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
    #[command(flatten)]
    pub check: CheckArgs,
    /// Pool the counts of all records into one extraction
    #[arg(long)]
    pub combine: bool,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    /// Input JSONL corpus, `-` for stdin
    #[arg(long, short, default_value = "-")]
    pub input: PathBuf,
    /// Output JSONL, `-` for stdout
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
    /// Manifest fixing n, family, backend and vocabulary
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model file whose vocabulary tokenizes text records
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// JSONL of {"mu": HEX, "k_p": N} [default: the manifest's id]
    #[arg(long)]
    pub ids: Option<PathBuf>,
    /// Fixed score threshold, or fpr:RATE@NULL.jsonl to calibrate one
    #[arg(long)]
    pub threshold: ThresholdArg,
    /// Worker threads
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    /// Report wall time on stderr
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    /// Input JSONL corpus, `-` for stdin
    #[arg(long, short, default_value = "-")]
    pub input: PathBuf,
    /// Output JSONL, `-` for stdout
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
    /// Edit to apply
    #[arg(long, value_enum)]
    pub kind: AttackArg,
    /// Fraction of tokens attacked
    #[arg(long, default_value_t = 0.2)]
    pub rate: f64,
    /// Seed for all randomness
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model file; tokenizes text records and drives overlap
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Vocabulary size for token records when no model is given
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Deletion never shortens a record below this many tokens
    #[arg(long, default_value_t = 2)]
    pub min_len: usize,
    /// Substitution table JSON [default: built from the synthetic corpus]
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Replacements per token when building a substitution table
    #[arg(long, default_value_t = 5)]
    pub neighbours: usize,
    /// Overlap: the attacker's watermark id
    #[arg(long)]
    pub mu: Option<MuArg>,
    /// Overlap: weight of the in-context bigram cache, in [0, 1)
    #[arg(long, default_value_t = 0.25)]
    pub cache_weight: f64,
    /// Overlap: keep generating through end-of-sequence tokens
    #[arg(long)]
    pub ignore_eos: bool,
    /// Per-record attack accounting as JSONL
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write records as text or as token ids
    #[arg(long, value_enum, default_value_t = EmitArg::Text)]
    pub emit: EmitArg,
    /// Worker threads
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    #[command(flatten, next_help_heading = "Overlap watermark")]
    pub embed: EmbedArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Experiment config JSON
    #[arg(long)]
    pub config: PathBuf,
    /// Report JSON path; a CSV is written next to it [default: config's output, else stdout]
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Worker threads [default: config's jobs, else all cores]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Null corpus JSONL: unwatermarked records
    #[arg(long)]
    pub null: PathBuf,
    #[command(flatten)]
    pub check: CheckArgs,
    /// Target false-positive rate
    #[arg(long, default_value_t = 0.01)]
    pub fpr: f64,
    /// Output JSON, `-` for stdout
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { util::EXIT_USAGE } else { util::EXIT_OK });
        }
    };
    let result = std::panic::catch_unwind(|| match cli.command {
        Command::Train(a) => cmd::train(&a),
        Command::Watermark(a) => cmd::watermark(&a),
        Command::Verify(a) => cmd::verify(&a),
        Command::Extract(a) => cmd::extract(&a),
        Command::Scan(a) => cmd::scan(&a),
        Command::Attack(a) => cmd::attack(&a),
        Command::Eval(a) => cmd::eval(&a),
        Command::Calibrate(a) => cmd::calibrate(&a),
    });
    match result {
        Ok(Ok(code)) => ExitCode::from(code),
        Ok(Err(f)) => {
            util::warn(&f);
            ExitCode::from(f.code)
        }
        Err(_) => ExitCode::from(util::EXIT_INTERNAL),
    }
}
