//! Stable seed derivation. Seeds depend only on their labelled inputs,
//! never on scheduling or iteration order.

use sha2::{Digest, Sha256};

/// Hashes `master` together with each labelled part into a 64-bit seed.
pub fn derive_seed(master: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
