//! Stable 128-bit content hashes rendered as lowercase hex.

use sha2::{Digest, Sha256};

/// First 128 bits of SHA-256 over the given parts, separated by a NUL byte.
pub fn stable_hash(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0u8]);
        }
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    hex::encode(&digest[..16])
}

pub fn prompt_hash(prompt: &str) -> String {
    stable_hash(&[prompt])
}

/// 64-bit seed derived from arbitrary key parts; used to fork RNG streams.
pub fn seed_from(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
