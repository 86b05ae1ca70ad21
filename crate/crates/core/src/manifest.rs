//! Watermark manifest: the protocol record a verifier needs to reproduce
//! the watermarking configuration.
//!
//! Serialized as canonical JSON: keys sorted, no insignificant whitespace.
//! Parsing is strict; unknown fields are rejected and every error names the
//! offending field.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::params::WatermarkParams;
use crate::perturb::PerturbationBasis;
use crate::types::{Backend, Family, WatermarkId};
use crate::vocab::VocabModel;

pub const TOOL_VERSION: &str = concat!("waterfall/", env!("CARGO_PKG_VERSION"));

const FIELDS: [&str; 10] = [
    "backend",
    "family",
    "k_p",
    "kappa",
    "mu",
    "n",
    "rng_seed",
    "tokenizer_id",
    "tool_version",
    "vocab_size",
];

#[derive(Debug, Error, PartialEq)]
pub enum ManifestError {
    #[error("manifest is not valid utf-8")]
    NotUtf8,
    #[error("manifest is not valid json: {0}")]
    Syntax(String),
    #[error("manifest must be a json object")]
    NotObject,
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("field `{field}` must be {expected}")]
    WrongType {
        field: &'static str,
        expected: &'static str,
    },
    #[error("field `{field}` out of range: {reason}")]
    OutOfRange { field: &'static str, reason: String },
    #[error("field `{field}` has unknown value {value:?}")]
    UnknownVariant { field: &'static str, value: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct WatermarkManifest {
    pub mu: WatermarkId,
    pub k_p: u64,
    pub kappa: f64,
    pub n: usize,
    pub family: Family,
    pub backend: Backend,
    pub vocab_size: usize,
    pub tokenizer_id: String,
    pub rng_seed: u64,
    pub tool_version: String,
}

impl WatermarkManifest {
    pub fn from_params(params: &WatermarkParams, vocab: &VocabModel) -> crate::Result<Self> {
        Ok(Self {
            mu: params.mu.clone(),
            k_p: params.effective_kp(vocab.size())?,
            kappa: params.kappa,
            n: params.n,
            family: params.family,
            backend: params.backend,
            vocab_size: vocab.size(),
            tokenizer_id: vocab.tokenizer_id().to_string(),
            rng_seed: params.rng_seed,
            tool_version: TOOL_VERSION.to_string(),
        })
    }

    pub fn to_canonical_json(&self) -> String {
        let mut m = Map::new();
        m.insert("backend".into(), self.backend.as_str().into());
        m.insert("family".into(), self.family.as_str().into());
        m.insert("k_p".into(), self.k_p.into());
        m.insert("kappa".into(), self.kappa.into());
        m.insert("mu".into(), self.mu.to_hex().into());
        m.insert("n".into(), (self.n as u64).into());
        m.insert("rng_seed".into(), self.rng_seed.into());
        m.insert("tokenizer_id".into(), self.tokenizer_id.clone().into());
        m.insert("tool_version".into(), self.tool_version.clone().into());
        m.insert("vocab_size".into(), (self.vocab_size as u64).into());
        // serde_json's default map is ordered by key
        Value::Object(m).to_string()
    }
}

pub fn load_manifest(bytes: &[u8]) -> Result<WatermarkManifest, ManifestError> {
    let text = std::str::from_utf8(bytes).map_err(|_| ManifestError::NotUtf8)?;
    let value: Value =
        serde_json::from_str(text).map_err(|e| ManifestError::Syntax(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(ManifestError::NotObject);
    };
    if let Some(extra) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(ManifestError::UnknownField(extra.clone()));
    }
    let get = |field: &'static str| obj.get(field).ok_or(ManifestError::MissingField(field));
    let get_u64 = |field: &'static str| {
        get(field)?.as_u64().ok_or(ManifestError::WrongType {
            field,
            expected: "a non-negative integer",
        })
    };
    let get_str = |field: &'static str| {
        get(field)?.as_str().ok_or(ManifestError::WrongType {
            field,
            expected: "a string",
        })
    };

    let mu = WatermarkId::from_hex(get_str("mu")?).map_err(|e| ManifestError::OutOfRange {
        field: "mu",
        reason: e.to_string(),
    })?;
    let family = get_str("family")?;
    let family = family
        .parse::<Family>()
        .map_err(|_| ManifestError::UnknownVariant {
            field: "family",
            value: family.to_string(),
        })?;
    let backend = get_str("backend")?;
    let backend = backend
        .parse::<Backend>()
        .map_err(|_| ManifestError::UnknownVariant {
            field: "backend",
            value: backend.to_string(),
        })?;
    let vocab_size = get_u64("vocab_size")? as usize;
    if vocab_size < 2 {
        return Err(ManifestError::OutOfRange {
            field: "vocab_size",
            reason: "must be at least 2".into(),
        });
    }
    let k_p = get_u64("k_p")?;
    let basis =
        PerturbationBasis::new(family, vocab_size).map_err(|e| ManifestError::OutOfRange {
            field: "vocab_size",
            reason: e.to_string(),
        })?;
    basis
        .check_key(k_p)
        .map_err(|e| ManifestError::OutOfRange {
            field: "k_p",
            reason: e.to_string(),
        })?;
    let kappa = get("kappa")?.as_f64().ok_or(ManifestError::WrongType {
        field: "kappa",
        expected: "a number",
    })?;
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(ManifestError::OutOfRange {
            field: "kappa",
            reason: "must be non-negative".into(),
        });
    }
    let n = get_u64("n")? as usize;
    if n < 1 {
        return Err(ManifestError::OutOfRange {
            field: "n",
            reason: "must be at least 1".into(),
        });
    }
    Ok(WatermarkManifest {
        mu,
        k_p,
        kappa,
        n,
        family,
        backend,
        vocab_size,
        tokenizer_id: get_str("tokenizer_id")?.to_string(),
        rng_seed: get_u64("rng_seed")?,
        tool_version: get_str("tool_version")?.to_string(),
    })
}
