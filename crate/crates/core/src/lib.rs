//! Simulation and model selection for directed stochastic block models:
//! network generation, SBM fitting, dyad-level cross-validation, information
//! criteria, community detection baselines and result scoring.

pub mod analysis;
pub mod criteria;
pub mod cv;
pub mod error;
pub mod folds;
pub mod netgen;
pub mod sbm;

use rand::SeedableRng;

pub use error::{Error, Result};

/// Random stream used throughout the crate.
pub type Stream = rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}

/// Derives an independent child seed (splitmix64 finalizer over the inputs).
pub fn child_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h = mix64(h ^ mix64(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    mix64(h)
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
