//! Ordered token vocabularies and their tokenizers.
//!
//! Two tokenizers are provided: a byte-level one (`|V| = 256`, every byte is
//! a token) and a word-level one built from a corpus by frequency cutoff,
//! with reserved `<unk>`, `<bos>` and `<eos>` tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::TokenId;

pub const BYTE_TOKENIZER_ID: &str = "byte-v1";
pub const WORD_TOKENIZER_ID: &str = "word-v1";

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OovPolicy {
    ReservedOovToken,
    ByteFallback,
}

#[derive(Clone, Debug)]
pub struct VocabModel {
    tokens: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, TokenId>,
    tokenizer_id: String,
    oov_policy: OovPolicy,
    fingerprint: String,
}

impl PartialEq for VocabModel {
    fn eq(&self, other: &Self) -> bool {
        self.fingerprint == other.fingerprint
    }
}

impl VocabModel {
    pub fn from_tokens(
        tokens: Vec<Vec<u8>>,
        tokenizer_id: impl Into<String>,
        oov_policy: OovPolicy,
    ) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::InvalidParam {
                field: "vocab",
                reason: format!("vocabulary needs at least 2 tokens, got {}", tokens.len()),
            });
        }
        if tokens.len() > u32::MAX as usize {
            return Err(Error::InvalidParam {
                field: "vocab",
                reason: "vocabulary exceeds 2^32 tokens".into(),
            });
        }
        let tokenizer_id = tokenizer_id.into();
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::InvalidParam {
                    field: "vocab",
                    reason: format!("duplicate token {:?}", String::from_utf8_lossy(tok)),
                });
            }
        }
        if oov_policy == OovPolicy::ReservedOovToken && !index.contains_key(UNK.as_bytes()) {
            return Err(Error::InvalidParam {
                field: "vocab",
                reason: "reserved-oov-token policy requires an <unk> token".into(),
            });
        }
        let fingerprint = fingerprint(&tokenizer_id, &tokens);
        Ok(Self {
            tokens,
            index,
            tokenizer_id,
            oov_policy,
            fingerprint,
        })
    }

    /// Byte-level vocabulary: token `b` is the single byte `b`.
    pub fn bytes() -> Self {
        let tokens = (0u8..=255).map(|b| vec![b]).collect();
        Self::from_tokens(tokens, BYTE_TOKENIZER_ID, OovPolicy::ByteFallback)
            .expect("byte vocabulary is valid")
    }

    /// Word-level vocabulary: reserved tokens first, then words by descending
    /// frequency (ties broken lexicographically), capped at `max_size` entries.
    pub fn build_word_level<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        max_size: usize,
    ) -> Result<Self> {
        let reserved = [UNK, BOS, EOS];
        if max_size < reserved.len() + 1 {
            return Err(Error::InvalidParam {
                field: "max_size",
                reason: format!("must be at least {}", reserved.len() + 1),
            });
        }
        let mut freq: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for word in split_words(text) {
                if !reserved.contains(&word.as_str()) {
                    *freq.entry(word).or_default() += 1;
                }
            }
        }
        let mut words: Vec<(String, u64)> = freq.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens: Vec<Vec<u8>> = reserved
            .iter()
            .map(|s| s.as_bytes().to_vec())
            .chain(words.into_iter().map(|(w, _)| w.into_bytes()))
            .take(max_size)
            .collect();
        Self::from_tokens(tokens, WORD_TOKENIZER_ID, OovPolicy::ReservedOovToken)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokenizer_id(&self) -> &str {
        &self.tokenizer_id
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov_policy
    }

    /// Content hash of the tokenizer id and token list.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn token(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn id_of(&self, token: &[u8]) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn unk_id(&self) -> Option<TokenId> {
        self.id_of(UNK.as_bytes())
    }

    pub fn bos_id(&self) -> Option<TokenId> {
        self.id_of(BOS.as_bytes())
    }

    pub fn eos_id(&self) -> Option<TokenId> {
        self.id_of(EOS.as_bytes())
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        [self.unk_id(), self.bos_id(), self.eos_id()].contains(&Some(id))
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<TokenId>> {
        self.encode(text.as_bytes())
    }

    pub fn encode(&self, input: &[u8]) -> Result<Vec<TokenId>> {
        match self.tokenizer_id.as_str() {
            BYTE_TOKENIZER_ID => Ok(input.iter().map(|&b| b as TokenId).collect()),
            WORD_TOKENIZER_ID => {
                let text = std::str::from_utf8(input)
                    .map_err(|e| Error::Tokenize(format!("input is not utf-8: {e}")))?;
                let unk = self.unk_id();
                split_words(text)
                    .into_iter()
                    .map(|w| match self.id_of(w.as_bytes()) {
                        Some(id) => Ok(id),
                        None => unk.ok_or_else(|| Error::Tokenize(format!("unknown word {w:?}"))),
                    })
                    .collect()
            }
            other => Err(Error::Tokenize(format!(
                "no local tokenizer for tokenizer_id {other:?}"
            ))),
        }
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let sep: &[u8] = if self.tokenizer_id == WORD_TOKENIZER_ID {
            b" "
        } else {
            b""
        };
        let mut out = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            let tok = self.token(id).ok_or(Error::TokenOutOfRange {
                id,
                vocab_size: self.size(),
            })?;
            if i > 0 {
                out.extend_from_slice(sep);
            }
            out.extend_from_slice(tok);
        }
        Ok(out)
    }

    /// Lossy for byte vocabularies whose output is not valid UTF-8.
    pub fn decode_text(&self, ids: &[TokenId]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode(ids)?).into_owned())
    }

    pub fn to_file(&self) -> VocabFile {
        match self.tokenizer_id.as_str() {
            BYTE_TOKENIZER_ID => VocabFile::Byte,
            _ => VocabFile::Word {
                tokenizer_id: self.tokenizer_id.clone(),
                tokens: self
                    .tokens
                    .iter()
                    .map(|t| String::from_utf8_lossy(t).into_owned())
                    .collect(),
            },
        }
    }

    pub fn from_file(file: VocabFile) -> Result<Self> {
        match file {
            VocabFile::Byte => Ok(Self::bytes()),
            VocabFile::Word {
                tokenizer_id,
                tokens,
            } => Self::from_tokens(
                tokens.into_iter().map(String::into_bytes).collect(),
                tokenizer_id,
                OovPolicy::ReservedOovToken,
            ),
        }
    }
}

/// Serialized vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VocabFile {
    Byte,
    Word {
        tokenizer_id: String,
        tokens: Vec<String>,
    },
}

fn fingerprint(tokenizer_id: &str, tokens: &[Vec<u8>]) -> String {
    let mut h = Sha256::new();
    h.update((tokenizer_id.len() as u64).to_be_bytes());
    h.update(tokenizer_id.as_bytes());
    for t in tokens {
        h.update((t.len() as u64).to_be_bytes());
        h.update(t);
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Lowercased alphanumeric runs and single punctuation characters. Whole
/// whitespace-delimited chunks equal to a reserved token are kept intact.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if [UNK, BOS, EOS].contains(&chunk) {
            out.push(chunk.to_string());
            continue;
        }
        let mut word = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                word.extend(c.to_lowercase());
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}
