use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::corpus::{BUNDLED_SEED, BUNDLED_TOKENS};
use crate::error::{Error, Result};
use crate::params::SamplingConfig;
use crate::types::{Backend, Family};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProviderSpec {
    /// Train a Markov model on the synthetic corpus.
    Toy {
        #[serde(default = "default_vocab")]
        vocab_size: usize,
        #[serde(default = "default_order")]
        order: usize,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_corpus_tokens")]
        corpus_tokens: usize,
        #[serde(default = "default_corpus_seed")]
        corpus_seed: u64,
    },
    /// Load a serialized model; prompts still come from the synthetic corpus.
    Model {
        path: PathBuf,
        #[serde(default = "default_corpus_tokens")]
        corpus_tokens: usize,
        #[serde(default = "default_corpus_seed")]
        corpus_seed: u64,
    },
}

impl ProviderSpec {
    pub fn toy(vocab_size: usize) -> Self {
        ProviderSpec::Toy {
            vocab_size,
            order: default_order(),
            alpha: default_alpha(),
            corpus_tokens: default_corpus_tokens(),
            corpus_seed: default_corpus_seed(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ProviderSpec::Toy {
                vocab_size,
                order,
                alpha,
                corpus_tokens,
                corpus_seed,
            } => format!(
                "toy markov order={order} alpha={alpha} vocab<={vocab_size} corpus={corpus_tokens}@{corpus_seed}"
            ),
            ProviderSpec::Model { path, .. } => format!("model {}", path.display()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Verifiability,
    Robustness,
    Scalability,
    Extraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// Overlap only: weight of the context bigram cache in the paraphraser.
    #[serde(default = "default_cache_weight")]
    pub cache_weight: f64,
    /// Overlap only: strength of the second watermark; defaults to the
    /// cell's kappa.
    #[serde(default)]
    pub second_kappa: Option<f64>,
    /// Substitute only: replacements per token in the generated table.
    #[serde(default = "default_neighbours")]
    pub neighbours: usize,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, rate: f64) -> Self {
        Self {
            kind,
            rate,
            seed: 0,
            cache_weight: default_cache_weight(),
            second_kappa: None,
            neighbours: default_neighbours(),
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            AttackKind::Overlap => format!("overlap(cache_weight={})", self.cache_weight),
            kind => format!("{kind}({})", self.rate),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_experiment")]
    pub experiment: ExperimentKind,
    #[serde(default = "default_provider")]
    pub provider: ProviderSpec,
    #[serde(default = "default_kappas")]
    pub kappas: Vec<f64>,
    #[serde(default = "default_lengths")]
    pub lengths: Vec<usize>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_family")]
    pub family: Family,
    #[serde(default = "default_backend")]
    pub backend: Backend,
    #[serde(default = "default_kp")]
    pub k_p: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default = "default_prompt_len")]
    pub prompt_len: usize,
    #[serde(default)]
    pub sampling: SamplingConfig,
    /// Scalability: number of wrong ids.
    #[serde(default = "default_id_count")]
    pub id_count: usize,
    /// Extraction: numbers of texts combined per trial.
    #[serde(default = "default_combine")]
    pub combine: Vec<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; not part of the results.
    #[serde(default, skip_serializing)]
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let c: Self = serde_json::from_slice(bytes)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials < 30 {
            return bad(format!("trials must be at least 30, got {}", self.trials));
        }
        if self.kappas.is_empty() || self.lengths.is_empty() {
            return bad("kappa and length grids must be nonempty".into());
        }
        if let Some(k) = self.kappas.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
            return bad(format!("kappa {k} must be a non-negative finite number"));
        }
        if let Some(l) = self.lengths.iter().find(|&&l| l < self.n.max(1)) {
            return bad(format!("length {l} is shorter than n = {}", self.n));
        }
        if self.n < 1 {
            return bad("n must be at least 1".into());
        }
        self.sampling.validate()?;
        for a in &self.attacks {
            if !(0.0..=1.0).contains(&a.rate) {
                return bad(format!("attack rate {} outside [0, 1]", a.rate));
            }
            if !(0.0..1.0).contains(&a.cache_weight) {
                return bad(format!("cache weight {} outside [0, 1)", a.cache_weight));
            }
        }
        if self.experiment == ExperimentKind::Robustness && self.attacks.is_empty() {
            return bad("a robustness experiment needs at least one attack".into());
        }
        if self.experiment == ExperimentKind::Scalability && self.id_count < 100 {
            return bad(format!("id_count must be at least 100, got {}", self.id_count));
        }
        if self.combine.is_empty() || self.combine.contains(&0) {
            return bad("combine counts must be positive".into());
        }
        if self.jobs == Some(0) {
            return bad("jobs must be at least 1".into());
        }
        Ok(())
    }

    pub fn jobs(&self) -> usize {
        self.jobs.unwrap_or_else(super::default_jobs)
    }
}

fn default_experiment() -> ExperimentKind {
    ExperimentKind::Verifiability
}
fn default_provider() -> ProviderSpec {
    ProviderSpec::toy(default_vocab())
}
fn default_vocab() -> usize {
    4096
}
fn default_order() -> usize {
    2
}
fn default_alpha() -> f64 {
    0.1
}
fn default_corpus_tokens() -> usize {
    BUNDLED_TOKENS
}
fn default_corpus_seed() -> u64 {
    BUNDLED_SEED
}
fn default_kappas() -> Vec<f64> {
    vec![0.0, 2.0, 4.0, 6.0]
}
fn default_lengths() -> Vec<usize> {
    vec![400]
}
fn default_n() -> usize {
    2
}
fn default_family() -> Family {
    Family::Fourier
}
fn default_backend() -> Backend {
    Backend::FisherYates
}
fn default_kp() -> u64 {
    1
}
fn default_trials() -> usize {
    200
}
fn default_prompt_len() -> usize {
    4
}
fn default_id_count() -> usize {
    1000
}
fn default_combine() -> Vec<usize> {
    vec![1, 3, 5]
}
fn default_rate() -> f64 {
    0.2
}
fn default_cache_weight() -> f64 {
    0.25
}
fn default_neighbours() -> usize {
    5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_takes_defaults() {
        let c = ExperimentConfig::from_json(b"{}").unwrap();
        assert_eq!(c.trials, 200);
        assert_eq!(c.kappas, vec![0.0, 2.0, 4.0, 6.0]);
        assert_eq!(c.provider, ProviderSpec::toy(4096));
    }

    #[test]
    fn parses_full_config() {
        let c = ExperimentConfig::from_json(
            br#"{"experiment":"robustness","provider":{"kind":"toy","vocab_size":1024},
                "kappas":[6],"trials":50,"attacks":[{"kind":"delete","rate":0.2}],"seed":3}"#,
        )
        .unwrap();
        assert_eq!(c.attacks[0].kind, AttackKind::Delete);
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_json(br#"{"trials":10}"#).is_err());
        assert!(ExperimentConfig::from_json(br#"{"kappas":[-1]}"#).is_err());
        assert!(ExperimentConfig::from_json(br#"{"bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json(br#"{"experiment":"robustness"}"#).is_err());
        assert!(ExperimentConfig::from_json(br#"{"lengths":[1],"n":2}"#).is_err());
    }
}
