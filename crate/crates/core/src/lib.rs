//! Permutation-keyed logit watermarking for generated token streams.
//!
//! Text is watermarked by perturbing a language model's next-token logits
//! with an orthogonal basis vector seen through a pseudorandom vocabulary
//! permutation keyed on the watermark id and the preceding tokens.
//! Verification needs only the token stream, the id and the key: tokens are
//! counted in permuted space and the counts are projected onto the basis
//! vector.

pub mod attacks;
pub mod corpus;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod extract;
pub mod keying;
pub mod manifest;
pub mod params;
pub mod perturb;
pub mod providers;
pub mod types;
pub mod verify;
pub mod vocab;
pub mod watermark;

pub use error::{Error, Result};
pub use extract::{combine_counts, extract_kp, ExtractionResult};
pub use keying::{derive_perm_key, PermKey, Permutation, Permuter};
pub use manifest::{load_manifest, WatermarkManifest};
pub use params::{derive_kp, SamplingConfig, Strategy, WatermarkParams};
pub use perturb::{basis_vector, perturb_logits, PerturbationBasis};
pub use providers::{LogitProvider, ProviderError, ToyMarkovLM};
pub use types::{Backend, Family, LogitVector, TokenId, TokenStream, WatermarkId};
pub use verify::{count_tokens, score, verify, CountVector, ThresholdSpec, VerificationReport};
pub use vocab::VocabModel;
pub use watermark::{beam_watermark, watermark_stream, watermark_text, WatermarkRequest};
