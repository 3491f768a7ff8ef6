//! Derived deterministic random streams.
//!
//! All randomness in the crate flows from one seeded counter-based scheme:
//! a `(seed, lane, step, tag)` tuple is hashed into a ChaCha8 key, so every
//! sample/step/check owns an independent stream. Results are reproducible
//! for any partitioning of work across threads, because a stream's identity
//! never depends on which worker runs it.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream tags keep unrelated draws from ever sharing a key.
pub mod tags {
    pub const INIT: u64 = 1;
    pub const STEP: u64 = 2;
    pub const SCORE_ERROR: u64 = 3;
    pub const CHECK: u64 = 4;
    pub const CALIBRATE: u64 = 5;
    pub const PERTURB: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    pub const JITTER: u64 = 8;
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent ChaCha8 stream for `(seed, lane, step, tag)`.
pub fn stream(seed: u64, lane: u64, step: u64, tag: u64) -> ChaCha8Rng {
    let mut state = seed;
    let mut absorb = |w: u64| {
        state = mix(state.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(w));
        state
    };
    let words = [absorb(tag), absorb(lane), absorb(step), absorb(0)];
    let mut key = [0u8; 32];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Draw a standard-normal vector of dimension `d` from `rng`.
pub fn standard_normal_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

/// Fill an existing vector with standard-normal draws.
pub fn fill_standard_normal(rng: &mut ChaCha8Rng, out: &mut DVector<f64>) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

/// Derive a per-check seed from a master seed and a check index.
pub fn child_seed(master: u64, index: u64) -> u64 {
    mix(master ^ mix(index.wrapping_add(0xA5A5_A5A5_A5A5_A5A5)))
}
