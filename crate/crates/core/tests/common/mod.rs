#![allow(dead_code)]

use barrier_solver::model::{ModelParams, ValidationMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Strict-mode parameters with `lambda2 > 0` from a box where the exp-poly
/// recursion stays well conditioned: contraction
/// `lambda1 lambda2 / (k1 k2) <= 0.5` and round-trip amplification
/// `lambda1 lambda2 / (k1 - k2)^2 <= 0.5`, where `k_i = lambda_i + delta_i`.
pub fn coupled_params(rng: &mut ChaCha8Rng) -> ModelParams {
    loop {
        let mu: f64 = rng.random_range(0.05..0.5);
        let sigma = rng.random_range(0.3..0.8);
        let delta2: f64 = rng.random_range(0.1..0.3);
        let lambda1: f64 = rng.random_range(0.5..2.0);
        let lambda2: f64 = rng.random_range(0.005..0.05);
        let threshold = -lambda1 * delta2 / (lambda2 + delta2);
        let delta1 = rng.random_range(0.6..0.9) * threshold;
        let k1 = lambda1 + delta1;
        let k2 = lambda2 + delta2;
        let contraction = lambda1 * lambda2 / (k1 * k2);
        let amplification = lambda1 * lambda2 / ((k1 - k2) * (k1 - k2));
        if contraction <= 0.5 && amplification <= 0.5 {
            return ModelParams::new(mu, sigma, delta1, delta2, lambda1, lambda2, ValidationMode::Strict);
        }
    }
}

/// Any strict-mode parameters, `lambda2` possibly 0.
pub fn strict_params(rng: &mut ChaCha8Rng) -> ModelParams {
    let mu: f64 = rng.random_range(0.05..0.5);
    let sigma = rng.random_range(0.3..1.0);
    let delta2 = rng.random_range(0.05..0.3);
    let lambda1 = rng.random_range(0.2..2.0);
    let lambda2 = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.05..1.0) };
    let threshold = -lambda1 * delta2 / (lambda2 + delta2);
    let delta1 = rng.random_range(0.0..0.95) * threshold;
    ModelParams::new(mu, sigma, delta1, delta2, lambda1, lambda2, ValidationMode::Strict)
}
