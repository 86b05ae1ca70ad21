//! Canonical byte layout of the permutation-key hash input.
//!
//! `u64 BE len(mu) || mu || u32 BE id` for each prefix token. The length
//! prefix on `mu` makes the layout injective over `(mu, prefix)`.

use crate::error::{Error, Result};
use crate::types::WatermarkId;

pub fn canonical_encode_key_input(mu: &WatermarkId, prefix: &[u64]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + mu.as_bytes().len() + 4 * prefix.len());
    out.extend_from_slice(&(mu.as_bytes().len() as u64).to_be_bytes());
    out.extend_from_slice(mu.as_bytes());
    for &id in prefix {
        let id = u32::try_from(id).map_err(|_| Error::EncodingRange(id))?;
        out.extend_from_slice(&id.to_be_bytes());
    }
    Ok(out)
}

/// Same layout for in-range `u32` token ids; cannot fail.
pub(crate) fn encode_key_input_u32(mu: &WatermarkId, prefix: &[u32], out: &mut Vec<u8>) {
    out.clear();
    out.extend_from_slice(&(mu.as_bytes().len() as u64).to_be_bytes());
    out.extend_from_slice(mu.as_bytes());
    for &id in prefix {
        out.extend_from_slice(&id.to_be_bytes());
    }
}
