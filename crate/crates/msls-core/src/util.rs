//! Small internal helpers shared across modules.

/// FNV-1a over a byte slice. Used for grid identifiers, config hashes, and
/// derived seeds; `std`'s hashers are not stable across releases, this is.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Hash a sequence of u64 words (field values, sub-seeds) into one u64.
pub fn fnv1a64_words(words: &[u64]) -> u64 {
    let mut bytes = Vec::with_capacity(words.len() * 8);
    for w in words {
        bytes.extend_from_slice(&w.to_le_bytes());
    }
    fnv1a64(&bytes)
}

/// Derive a child seed from a parent seed and a label, so independent random
/// streams never alias each other.
pub fn derive_seed(parent: u64, label: &str, index: u64) -> u64 {
    let mut bytes = Vec::with_capacity(label.len() + 16);
    bytes.extend_from_slice(&parent.to_le_bytes());
    bytes.extend_from_slice(label.as_bytes());
    bytes.extend_from_slice(&index.to_le_bytes());
    fnv1a64(&bytes)
}
