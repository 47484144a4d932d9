//! Named seed derivation so every random stream is reproducible and
//! independent of evaluation order.

use sha2::{Digest, Sha256};

/// Hashes a sequence of labelled parts into a 64-bit seed.
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed for one child stream of `parent`.
pub fn child_seed(parent: u64, label: &str, index: u64) -> u64 {
    derive_seed(&[&parent.to_le_bytes(), label.as_bytes(), &index.to_le_bytes()])
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_depend_on_every_part() {
        let a = derive_seed(&[b"x", b"yz"]);
        assert_eq!(a, derive_seed(&[b"x", b"yz"]));
        assert_ne!(a, derive_seed(&[b"xy", b"z"]));
        assert_ne!(child_seed(1, "s", 0), child_seed(1, "s", 1));
    }

    #[test]
    fn hex_digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
