use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over arbitrary bytes; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derives a stage- or item-level sub-seed from the global seed and a name.
/// All randomness in the pipeline flows through this function.
pub fn derive_seed(global: u64, name: &str) -> u64 {
    let mut buf = Vec::with_capacity(8 + name.len());
    buf.extend_from_slice(&global.to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    fnv1a(&buf)
}

/// Per-item sub-seed, e.g. one per utterance, independent of worker count.
pub fn derive_indexed_seed(global: u64, name: &str, index: u64) -> u64 {
    derive_seed(derive_seed(global, name), &index.to_string())
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable() {
        assert_eq!(derive_seed(7, "corpus"), derive_seed(7, "corpus"));
        assert_ne!(derive_seed(7, "corpus"), derive_seed(7, "train-md"));
        assert_ne!(derive_seed(7, "corpus"), derive_seed(8, "corpus"));
    }

    #[test]
    fn indexed_seeds_differ() {
        assert_ne!(
            derive_indexed_seed(7, "utt", 0),
            derive_indexed_seed(7, "utt", 1)
        );
    }
}
