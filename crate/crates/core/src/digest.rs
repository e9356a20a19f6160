//! Content digests used for provenance (config digests, prompt digests).

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short digest of the canonical JSON form of `value` (first 16 hex chars of
/// SHA-256).
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types serialize");
    sha256_hex(&json)[..16].to_string()
}
