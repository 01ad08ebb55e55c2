//! Deterministic seed splitting and random-draw helpers.
//!
//! Every Monte-Carlo trial owns an independent ChaCha8 stream whose seed is
//! derived from `(master, trial)`. Results therefore do not depend on how
//! trials are scheduled across threads.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type TrialRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function. A bijection on `u64`.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of trial `trial` from a master seed.
///
/// For a fixed master the map `trial -> seed` is injective: the affine
/// step `master + (trial + 1) * gamma` is injective modulo 2^64 because
/// gamma is odd, and the mixer is a bijection.
pub fn derive_seed(master: u64, trial: u64) -> u64 {
    mix64(master.wrapping_add(trial.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Stream for a given `(master, trial)` pair.
pub fn trial_rng(master: u64, trial: u64) -> TrialRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, trial))
}

/// Stream seeded directly from `seed`.
pub fn seeded_rng(seed: u64) -> TrialRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Circular complex Gaussian draw with total variance `var`
/// (real and imaginary parts each carry `var / 2`).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Unit-modulus phasor with uniform phase.
pub fn random_phase<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)
}
