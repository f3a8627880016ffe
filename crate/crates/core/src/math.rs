//! Scalar helpers shared by the loss, scoring and verification code.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Logistic function, evaluated without overflow for any finite input.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// `-ln σ(x)`, the logistic loss of a margin `x`.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    softplus(-x)
}

/// `ln σ(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Round half to even. Used for every budget/count rounding in the crate.
pub fn round_half_even(x: f64) -> f64 {
    libm::rint(x)
}

/// Non-negative count `round_half_even(x)` as `usize`.
pub fn rounded_count(x: f64) -> usize {
    let r = round_half_even(x);
    if r <= 0.0 {
        0
    } else {
        r as usize
    }
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Consumers of randomness. Each gets its own ChaCha stream range so that equal
/// seeds in different places never replay the same sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    SynthPlan = 1,
    SynthPrompt = 2,
    RewardSample = 3,
    RewardShuffle = 4,
    RandomSelection = 5,
    Theory = 6,
}

/// Deterministic generator for a named seed, a consumer and an index within it.
pub fn seeded_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) | (index & ((1 << 48) - 1)));
    rng
}
