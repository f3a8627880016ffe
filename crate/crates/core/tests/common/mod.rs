#![allow(dead_code)]

use pdsel_core::{PreferencePair, Response};
use rand::Rng;

pub fn uniform_vec(rng: &mut impl Rng, dim: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn pair(id: impl Into<String>, aspect: usize, chosen: Response, rejected: Response) -> PreferencePair {
    let id = id.into();
    PreferencePair {
        prompt_id: format!("prompt-{id}"),
        id,
        aspect,
        chosen,
        rejected,
        truth: None,
    }
}

pub fn random_pair(rng: &mut impl Rng, id: usize, aspect: usize, dim: usize) -> PreferencePair {
    let chosen = Response::new(uniform_vec(rng, dim, -1.0, 1.0), rng.random_range(1..200));
    let rejected = Response::new(uniform_vec(rng, dim, -1.0, 1.0), rng.random_range(1..200));
    pair(format!("p{id:05}"), aspect, chosen, rejected)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `-ln σ(x)` by direct evaluation; only accurate for moderate `|x|`.
pub fn naive_neg_log_sigmoid(x: f64) -> f64 {
    -(1.0 / (1.0 + (-x).exp())).ln()
}
