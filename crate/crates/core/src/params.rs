use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::encode_key_input_u32;
use crate::error::{Error, Result};
use crate::perturb::PerturbationBasis;
use crate::types::{Backend, Family, WatermarkId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Multinomial,
    Greedy,
    Beam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub strategy: Strategy,
    pub temperature: f64,
    pub top_p: f64,
    pub beam_width: usize,
    /// Weight of the watermark term in the beam objective.
    pub beam_lambda: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Multinomial,
            temperature: 1.0,
            top_p: 1.0,
            beam_width: 4,
            beam_lambda: 1.0,
        }
    }
}

impl SamplingConfig {
    pub fn greedy() -> Self {
        Self {
            strategy: Strategy::Greedy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid("temperature", "must be a positive finite number"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(invalid("top_p", "must lie in (0, 1]"));
        }
        if self.beam_width < 1 {
            return Err(invalid("beam_width", "must be at least 1"));
        }
        if !(self.beam_lambda >= 0.0 && self.beam_lambda.is_finite()) {
            return Err(invalid("beam_lambda", "must be a non-negative finite number"));
        }
        Ok(())
    }
}

/// The full watermarking protocol tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct WatermarkParams {
    pub mu: WatermarkId,
    pub k_p: u64,
    /// When set, `k_p` is derived from `(mu, metadata_z)` by [`derive_kp`].
    pub metadata_z: Option<Vec<u8>>,
    pub kappa: f64,
    pub n: usize,
    pub family: Family,
    pub backend: Backend,
    pub sampling: SamplingConfig,
    pub max_tokens: usize,
    pub rng_seed: u64,
}

impl WatermarkParams {
    /// Defaults: n = 2, fourier, fisher-yates, multinomial at temperature 1,
    /// `max_tokens` = 1024.
    pub fn new(mu: WatermarkId, k_p: u64, kappa: f64) -> Self {
        Self {
            mu,
            k_p,
            metadata_z: None,
            kappa,
            n: 2,
            family: Family::Fourier,
            backend: Backend::FisherYates,
            sampling: SamplingConfig::default(),
            max_tokens: 1024,
            rng_seed: 0,
        }
    }

    pub fn basis(&self, vocab_size: usize) -> Result<PerturbationBasis> {
        PerturbationBasis::new(self.family, vocab_size)
    }

    /// The perturbation key in force: derived from metadata when present.
    pub fn effective_kp(&self, vocab_size: usize) -> Result<u64> {
        match &self.metadata_z {
            Some(z) => derive_kp(&self.mu, z, &self.basis(vocab_size)?),
            None => Ok(self.k_p),
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let basis = self.basis(vocab_size)?;
        basis.check_key(self.effective_kp(vocab_size)?)?;
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(invalid("kappa", "must be a non-negative finite number"));
        }
        if self.n < 1 {
            return Err(invalid("n", "must be at least 1"));
        }
        if self.max_tokens < 1 {
            return Err(invalid("max_tokens", "must be at least 1"));
        }
        self.sampling.validate()
    }
}

/// Perturbation key from metadata: `lo + (SHA-256("kp" || enc(mu) || z)[..8] mod range)`.
pub fn derive_kp(mu: &WatermarkId, z: &[u8], basis: &PerturbationBasis) -> Result<u64> {
    let (lo, hi) = basis.key_range()?;
    let mut enc = Vec::new();
    encode_key_input_u32(mu, &[], &mut enc);
    let mut h = Sha256::new();
    h.update(b"kp");
    h.update(&enc);
    h.update(z);
    let digest = h.finalize();
    let v = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    Ok(lo + v % (hi - lo + 1))
}

fn invalid(field: &'static str, reason: &str) -> Error {
    Error::InvalidParam {
        field,
        reason: reason.to_string(),
    }
}
