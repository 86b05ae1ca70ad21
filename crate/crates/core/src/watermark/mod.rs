//! Watermarked generation.
//!
//! At every step the permutation key is derived from the watermark id and
//! the last `n - 1` tokens, the provider's logits are perturbed with
//! `kappa * phi_{k_p}` in permuted space, and the next token is sampled.
//! At the start of a stream the prefix is taken from the tail of the
//! context, so the first tokens also carry signal. The end-of-sequence
//! token stops generation and is not part of the output.

mod beam;
pub mod sampling;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use beam::{beam_watermark, beam_watermark_with};

use crate::error::{Error, Result};
use crate::keying::{derive_perm_key, Permuter};
use crate::manifest::WatermarkManifest;
use crate::params::{SamplingConfig, Strategy, WatermarkParams};
use crate::perturb::{perturb_logits, PerturbationBasis};
use crate::providers::LogitProvider;
use crate::types::{check_ids, TokenId};
use crate::vocab::VocabModel;

pub struct WatermarkRequest<'a> {
    pub params: WatermarkParams,
    /// The prompt. For text watermarking it embeds the source text.
    pub context: Vec<TokenId>,
    pub provider: &'a dyn LogitProvider,
}

/// Generated tokens, without the prompt and without any end-of-sequence
/// token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generation {
    pub ids: Vec<TokenId>,
    pub stopped_at_eos: bool,
}

pub fn watermark_stream(request: &WatermarkRequest<'_>) -> Result<Generation> {
    let permuter = Permuter::new(request.params.backend, request.provider.vocab_size());
    watermark_stream_with(request, &permuter)
}

/// As [`watermark_stream`], reusing `permuter` and its cache across calls.
pub fn watermark_stream_with(request: &WatermarkRequest<'_>, permuter: &Permuter) -> Result<Generation> {
    let params = &request.params;
    let provider = request.provider;
    let size = provider.vocab_size();
    params.validate(size)?;
    check_ids(&request.context, size)?;
    check_permuter(permuter, params, size)?;
    if params.sampling.strategy == Strategy::Beam {
        return beam_watermark_with(request, permuter);
    }
    let basis = params.basis(size)?;
    let k_p = params.effective_kp(size)?;
    let keep = params.n - 1;
    run(
        provider,
        &request.context,
        &params.sampling,
        params.max_tokens,
        params.rng_seed,
        |full, logits| {
            let key = derive_perm_key(&params.mu, &full[full.len().saturating_sub(keep)..]);
            perturb_logits(&logits, key, k_p, params.kappa, &basis, permuter)
        },
    )
}

/// Unwatermarked sampling with the same sampler and random stream as
/// [`watermark_stream`].
pub fn generate_plain(
    provider: &dyn LogitProvider,
    prompt: &[TokenId],
    sampling: &SamplingConfig,
    max_tokens: usize,
    rng_seed: u64,
) -> Result<Vec<TokenId>> {
    sampling.validate()?;
    check_ids(prompt, provider.vocab_size())?;
    run(provider, prompt, sampling, max_tokens, rng_seed, |_, l| Ok(l)).map(|g| g.ids)
}

fn run(
    provider: &dyn LogitProvider,
    context: &[TokenId],
    sampling: &SamplingConfig,
    max_tokens: usize,
    rng_seed: u64,
    mut transform: impl FnMut(&[TokenId], Vec<f64>) -> Result<Vec<f64>>,
) -> Result<Generation> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let eos = provider.eos_id();
    let mut full = Vec::with_capacity(context.len() + max_tokens);
    full.extend_from_slice(context);
    let start = context.len();
    for _ in 0..max_tokens {
        let logits = provider.next_logits(&full).map_err(|source| Error::PartialOutput {
            generated: full[start..].to_vec(),
            source,
        })?;
        let logits = transform(&full, logits)?;
        let t = sampling::sample_token(&logits, sampling, &mut rng);
        if Some(t) == eos {
            return Ok(Generation {
                ids: full.split_off(start),
                stopped_at_eos: true,
            });
        }
        full.push(t);
    }
    Ok(Generation {
        ids: full.split_off(start),
        stopped_at_eos: false,
    })
}

pub(crate) fn check_permuter(permuter: &Permuter, params: &WatermarkParams, size: usize) -> Result<()> {
    if permuter.size() != size {
        return Err(Error::LengthMismatch {
            expected: size,
            actual: permuter.size(),
        });
    }
    if permuter.backend() != params.backend {
        return Err(Error::Protocol {
            field: "backend",
            manifest: params.backend.to_string(),
            local: permuter.backend().to_string(),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct WatermarkedText {
    pub text: String,
    pub ids: Vec<TokenId>,
    pub stopped_at_eos: bool,
    pub manifest: WatermarkManifest,
}

/// Watermarks `text` by regenerating it with the provider prompted by
/// `[BOS] ++ tokens(text)`.
pub fn watermark_text(
    text: &str,
    params: &WatermarkParams,
    provider: &dyn LogitProvider,
    vocab: &VocabModel,
) -> Result<WatermarkedText> {
    let permuter = Permuter::new(params.backend, vocab.size());
    watermark_text_with(text, params, provider, vocab, &permuter)
}

pub fn watermark_text_with(
    text: &str,
    params: &WatermarkParams,
    provider: &dyn LogitProvider,
    vocab: &VocabModel,
    permuter: &Permuter,
) -> Result<WatermarkedText> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput("text to watermark"));
    }
    check_provider_vocab(provider, vocab)?;
    let mut context: Vec<TokenId> = vocab.bos_id().into_iter().collect();
    context.extend(vocab.encode_text(text)?);
    let request = WatermarkRequest {
        params: params.clone(),
        context,
        provider,
    };
    let generation = watermark_stream_with(&request, permuter)?;
    Ok(WatermarkedText {
        text: vocab.decode_text(&generation.ids)?,
        ids: generation.ids,
        stopped_at_eos: generation.stopped_at_eos,
        manifest: WatermarkManifest::from_params(params, vocab)?,
    })
}

pub(crate) fn check_provider_vocab(provider: &dyn LogitProvider, vocab: &VocabModel) -> Result<()> {
    if provider.vocab_size() != vocab.size() {
        return Err(Error::Protocol {
            field: "vocab_size",
            manifest: vocab.size().to_string(),
            local: provider.vocab_size().to_string(),
        });
    }
    if provider.vocab_ref() != vocab.fingerprint() {
        return Err(Error::Protocol {
            field: "vocab_ref",
            manifest: vocab.fingerprint().to_string(),
            local: provider.vocab_ref().to_string(),
        });
    }
    Ok(())
}

/// The target distribution of one watermarked step in model order,
/// `softmax(logits + kappa * phi[P(key, .)])`.
pub fn perturbed_distribution(
    logits: &[f64],
    key: crate::keying::PermKey,
    k_p: u64,
    kappa: f64,
    basis: &PerturbationBasis,
    permuter: &Permuter,
) -> Result<Vec<f64>> {
    Ok(sampling::softmax(&perturb_logits(logits, key, k_p, kappa, basis, permuter)?, 1.0))
}
