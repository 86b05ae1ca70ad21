use std::fmt;
use std::fs;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use waterfall_core::corpus::{read_jsonl, CorpusRecord, LineError};
use waterfall_core::providers::{ModelBundle, ProviderError, ToyMarkovLM};
use waterfall_core::{load_manifest, Error, VocabModel, WatermarkId, WatermarkManifest};

pub const EXIT_OK: u8 = 0;
pub const EXIT_PARTIAL: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_DATA: u8 = 65;
pub const EXIT_UNAVAILABLE: u8 = 69;
pub const EXIT_INTERNAL: u8 = 70;
pub const EXIT_IO: u8 = 74;

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(EXIT_DATA, message)
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        Self::new(EXIT_IO, format!("{}: {e}", display(path)))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Exit code for a core error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Provider(p) | Error::PartialOutput { source: p, .. } => provider_code(p),
        Error::Config(_)
        | Error::InvalidParam { .. }
        | Error::KeyOutOfRange { .. }
        | Error::UnsupportedVocabSize { .. } => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn provider_code(p: &ProviderError) -> u8 {
    match p {
        ProviderError::BadContext { .. } => EXIT_DATA,
        _ => EXIT_UNAVAILABLE,
    }
}

/// True for errors that mean the logit provider is unusable, which abort
/// a whole run rather than failing one record.
pub fn is_infrastructure(e: &Error) -> bool {
    exit_code(e) == EXIT_UNAVAILABLE
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::new(exit_code(&e), e.to_string())
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub fn display(path: &Path) -> String {
    if path == Path::new("-") {
        "<stdin>".into()
    } else {
        path.display().to_string()
    }
}

/// Reads a file, or standard input for `-`.
pub fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    if path == Path::new("-") {
        io::stdin().read_to_end(&mut buf).map_err(|e| Failure::io(path, e))?;
    } else {
        buf = fs::read(path).map_err(|e| Failure::io(path, e))?;
    }
    Ok(buf)
}

pub fn read_records(path: &Path) -> CliResult<Vec<Result<CorpusRecord, LineError>>> {
    let bytes = read_input(path)?;
    read_jsonl(BufReader::new(bytes.as_slice())).map_err(|e| match e {
        Error::Io(io) => Failure::io(path, io),
        other => Failure::from(other),
    })
}

/// Writes to a file, or standard output for `-`.
pub fn write_output(path: &Path, contents: &[u8]) -> CliResult<()> {
    if path == Path::new("-") {
        let mut out = io::stdout().lock();
        out.write_all(contents)
            .and_then(|_| out.flush())
            .map_err(|e| Failure::io(Path::new("<stdout>"), e))
    } else {
        fs::write(path, contents).map_err(|e| Failure::io(path, e))
    }
}

/// Rejects an output path that names one of the inputs.
pub fn check_distinct(output: &Path, inputs: &[&Path]) -> CliResult<()> {
    if output == Path::new("-") {
        return Ok(());
    }
    let canon = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let out = canon(output);
    for input in inputs {
        if *input != Path::new("-") && canon(input) == out {
            return Err(Failure::usage(format!(
                "output {} would overwrite an input file",
                display(output)
            )));
        }
    }
    Ok(())
}

pub fn load_model(path: &Path) -> CliResult<(VocabModel, ToyMarkovLM)> {
    let bytes = read_input(path)?;
    ModelBundle::from_json(&bytes)
        .and_then(ModelBundle::into_parts)
        .map_err(|e| Failure::data(format!("{}: {e}", display(path))))
}

pub fn read_manifest(path: &Path) -> CliResult<WatermarkManifest> {
    let bytes = read_input(path)?;
    load_manifest(&bytes).map_err(|e| Failure::data(format!("{}: {e}", display(path))))
}

/// Checks that a vocabulary is the one a manifest was written for.
pub fn check_vocab(vocab: &VocabModel, manifest: &WatermarkManifest) -> CliResult<()> {
    if vocab.size() != manifest.vocab_size || vocab.tokenizer_id() != manifest.tokenizer_id {
        return Err(Failure::data(format!(
            "model vocabulary ({} tokens, {}) does not match the manifest ({} tokens, {})",
            vocab.size(),
            vocab.tokenizer_id(),
            manifest.vocab_size,
            manifest.tokenizer_id
        )));
    }
    Ok(())
}

/// A watermark id given as hex, or `@path` to a file holding the hex.
#[derive(Clone, Debug, PartialEq)]
pub struct MuArg(pub WatermarkId);

impl FromStr for MuArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let hex = match s.strip_prefix('@') {
            Some(path) => fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?,
            None => s.to_string(),
        };
        WatermarkId::from_hex(hex.trim())
            .map(MuArg)
            .map_err(|e| e.to_string())
    }
}

/// `--threshold` grammar: a fixed score, or `fpr:RATE@NULL.jsonl` to
/// calibrate on the scores of a null corpus.
#[derive(Clone, Debug, PartialEq)]
pub enum ThresholdArg {
    Fixed(f64),
    Fpr { rate: f64, null: PathBuf },
}

impl FromStr for ThresholdArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(rest) = s.strip_prefix("fpr:") {
            let (rate, path) = rest
                .split_once('@')
                .ok_or_else(|| "expected fpr:RATE@NULL_CORPUS".to_string())?;
            let rate: f64 = rate.parse().map_err(|_| format!("bad rate {rate:?}"))?;
            if !(rate > 0.0 && rate < 1.0) {
                return Err(format!("rate {rate} outside (0, 1)"));
            }
            if path.is_empty() {
                return Err("missing null corpus path".into());
            }
            return Ok(ThresholdArg::Fpr {
                rate,
                null: PathBuf::from(path),
            });
        }
        let t: f64 = s.parse().map_err(|_| format!("expected a number or fpr:RATE@PATH, got {s:?}"))?;
        if !t.is_finite() {
            return Err("threshold must be finite".into());
        }
        Ok(ThresholdArg::Fixed(t))
    }
}

/// One JSON object per line.
pub fn jsonl<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).expect("value serializes");
        out.push(b'\n');
    }
    out
}

pub fn warn(message: impl fmt::Display) {
    eprintln!("waterfall: {message}");
}
