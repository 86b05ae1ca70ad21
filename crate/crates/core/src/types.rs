//! Small domain types shared by every module.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Unnormalized next-token scores, one per vocabulary entry.
pub type LogitVector = Vec<f64>;

/// Client watermark identifier. Equality is byte equality of the canonical form.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct WatermarkId(Vec<u8>);

impl WatermarkId {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Self {
        Self(bytes.into())
    }

    /// Big-endian, minimal length. Zero encodes as the empty string.
    pub fn from_u64(value: u64) -> Self {
        let bytes = value.to_be_bytes();
        let skip = bytes.iter().take_while(|b| **b == 0).count();
        Self(bytes[skip..].to_vec())
    }

    pub fn from_hex(hex: &str) -> Result<Self> {
        let hex = hex.trim();
        let hex = hex.strip_prefix("0x").unwrap_or(hex);
        if hex.len() % 2 != 0 {
            return Err(Error::InvalidParam {
                field: "mu",
                reason: "hex string has odd length".into(),
            });
        }
        let mut out = Vec::with_capacity(hex.len() / 2);
        for pair in hex.as_bytes().chunks(2) {
            let s = std::str::from_utf8(pair).map_err(|_| Error::InvalidParam {
                field: "mu",
                reason: "hex string is not ascii".into(),
            })?;
            let byte = u8::from_str_radix(s, 16).map_err(|_| Error::InvalidParam {
                field: "mu",
                reason: format!("invalid hex digits {s:?}"),
            })?;
            out.push(byte);
        }
        Ok(Self(out))
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for WatermarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WatermarkId({})", self.to_hex())
    }
}

impl fmt::Display for WatermarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Orthogonal function family used for the perturbation signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Fourier,
    Square,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Fourier => "fourier",
            Family::Square => "square",
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fourier" => Ok(Family::Fourier),
            "square" => Ok(Family::Square),
            other => Err(Error::InvalidParam {
                field: "family",
                reason: format!("unknown family {other:?}"),
            }),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Vocabulary permutation backend. Part of the protocol: the two backends
/// generate different permutation families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    FisherYates,
    FeistelPrp,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::FisherYates => "fisher-yates",
            Backend::FeistelPrp => "feistel-prp",
        }
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fisher-yates" => Ok(Backend::FisherYates),
            "feistel-prp" => Ok(Backend::FeistelPrp),
            other => Err(Error::InvalidParam {
                field: "backend",
                reason: format!("unknown backend {other:?}"),
            }),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A sequence of token ids tied to the vocabulary they index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenStream {
    pub ids: Vec<TokenId>,
    pub vocab_ref: String,
}

impl TokenStream {
    pub fn new(ids: Vec<TokenId>, vocab_ref: impl Into<String>, vocab_size: usize) -> Result<Self> {
        check_ids(&ids, vocab_size)?;
        Ok(Self {
            ids,
            vocab_ref: vocab_ref.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Errors on the first id outside `0..vocab_size`.
pub fn check_ids(ids: &[TokenId], vocab_size: usize) -> Result<()> {
    match ids.iter().find(|&&id| id as usize >= vocab_size) {
        Some(&id) => Err(Error::TokenOutOfRange { id, vocab_size }),
        None => Ok(()),
    }
}
