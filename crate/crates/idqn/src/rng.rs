//! Deterministic seeding utilities.
//!
//! World layouts are seeded with raw SplitMix64 so the placement procedure
//! can be re-derived independently from the published constants. Everything
//! that needs a long-lived stream (weight init, replay sampling) runs on a
//! ChaCha generator keyed off a root seed plus a stream tag, so the streams
//! never alias each other.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One SplitMix64 step: advances `state` in place and returns the output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed for `(root, stream)`.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut s = root ^ stream.wrapping_mul(0xA24B_AED4_963E_E407);
    splitmix64(&mut s)
}

/// Two-level derivation for indexed streams (e.g. per-episode seeds).
pub fn derive_seed2(root: u64, stream: u64, index: u64) -> u64 {
    derive_seed(derive_seed(root, stream), index)
}

/// ChaCha stream keyed by `(root, stream)`.
pub fn chacha(root: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream))
}

/// Stream tags. Fixed constants: changing one silently changes every run.
pub mod stream {
    pub const MODEL_INIT: u64 = 1;
    pub const REPLAY: u64 = 2;
    pub const EPISODE: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const EPSILON: u64 = 5;
    pub const ROLLOUT: u64 = 6;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // Published SplitMix64 test vector: state 1234567 produces this
        // sequence in every conforming implementation.
        let mut s = 1234567u64;
        let a = splitmix64(&mut s);
        let b = splitmix64(&mut s);
        assert_eq!(a, 6457827717110365317);
        assert_eq!(b, 3203168211198807973);
    }

    #[test]
    fn derive_is_deterministic_and_stream_separated() {
        assert_eq!(derive_seed(42, 1), derive_seed(42, 1));
        assert_ne!(derive_seed(42, 1), derive_seed(42, 2));
        assert_ne!(derive_seed(42, 1), derive_seed(43, 1));
        assert_ne!(derive_seed2(42, 3, 0), derive_seed2(42, 3, 1));
    }

    #[test]
    fn chacha_streams_reproduce() {
        use rand::RngCore;
        let mut a = chacha(7, stream::REPLAY);
        let mut b = chacha(7, stream::REPLAY);
        assert_eq!(a.next_u64(), b.next_u64());
    }
}
