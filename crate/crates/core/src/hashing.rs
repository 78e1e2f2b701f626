//! Content hashes used to key cached artifacts.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub type Hash = [u8; 32];

pub fn hash_bytes(parts: &[&[u8]]) -> Hash {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// Hash of the canonical JSON encoding of `value`, chained onto `parents`.
pub fn hash_json<T: Serialize>(value: &T, parents: &[&Hash]) -> Hash {
    // serde_json writes struct fields in declaration order, so the encoding is stable.
    let body = serde_json::to_vec(value).expect("config types serialize infallibly");
    let mut parts: Vec<&[u8]> = parents.iter().map(|h| &h[..]).collect();
    parts.push(&body);
    hash_bytes(&parts)
}

pub fn hash_f64s(values: &[f64]) -> Hash {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().into()
}

pub fn to_hex(hash: &Hash) -> String {
    hex::encode(hash)
}

pub fn short_hex(hash: &Hash) -> String {
    hex::encode(&hash[..6])
}

pub fn from_hex(s: &str) -> Option<Hash> {
    let bytes = hex::decode(s).ok()?;
    bytes.try_into().ok()
}
