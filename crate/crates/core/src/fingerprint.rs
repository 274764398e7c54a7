//! Content hashes for manifests, datasets and configs.

use serde::Serialize;
use sha2::{Digest, Sha256};

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the JSON serialisation of `value`.
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("serialisable value");
    hex(&Sha256::digest(json))
}

/// SHA-256 over the exact bit patterns of `samples`.
pub fn samples_hash(samples: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in samples {
        // Signed zeros hash alike.
        h.update((v + 0.0).to_bits().to_le_bytes());
    }
    hex(&h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_are_stable_and_sensitive() {
        assert_eq!(samples_hash(&[0.0]), samples_hash(&[-0.0]));
        assert_ne!(samples_hash(&[1.0]), samples_hash(&[1.0 + f64::EPSILON]));
        assert_eq!(fingerprint(&[1, 2]).len(), 64);
        // Known SHA-256 of the JSON text "[1,2]".
        assert_eq!(fingerprint(&[1, 2]), hex(&Sha256::digest(b"[1,2]")));
    }
}
