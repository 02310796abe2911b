//! Seeded stream derivation. Every stochastic stage draws from its own
//! ChaCha stream derived from the scenario seed plus a purpose tag, so
//! replay is byte-identical regardless of evaluation order or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; decorrelates derived seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent RNG from a master seed and a purpose tag.
pub fn derive(master: u64, tag: &str, lanes: &[u64]) -> ChaCha8Rng {
    let mut state = mix(master);
    for byte in tag.bytes() {
        state = mix(state ^ u64::from(byte));
    }
    for &lane in lanes {
        state = mix(state ^ lane);
    }
    ChaCha8Rng::seed_from_u64(state)
}
