use sha2::{Digest, Sha256};

/// Platform- and release-independent 64-bit hash over a sequence of byte
/// strings. Each part is length-prefixed so that ("ab","c") != ("a","bc").
pub fn stable_hash64(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}
