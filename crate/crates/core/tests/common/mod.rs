#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rd_lens::models::{Model, ModelParams, Provenance};
use rd_lens::prob::{CondDist, FiniteDist};
use rd_lens::toygen::{calibrate_noise, Geometry, ToyProcess};
use std::sync::OnceLock;

pub fn toy() -> &'static ToyProcess {
    static TP: OnceLock<ToyProcess> = OnceLock::new();
    TP.get_or_init(|| calibrate_noise(0.5, &Geometry::default()).unwrap().0)
}

pub fn logits(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_dist(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> FiniteDist {
    FiniteDist::from_logits(&logits(rng, n, scale))
}

pub fn random_cond(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> CondDist {
    CondDist::from_logit_rows(rows, cols, &logits(rng, rows * cols, scale))
}

/// Tabular model with strictly positive entries.
pub fn random_model(rng: &mut ChaCha8Rng, bins: usize, latents: usize, scale: f64) -> Model {
    Model {
        encoder: random_cond(rng, bins, latents, scale),
        decoder: random_cond(rng, latents, bins, scale),
        marginal: random_dist(rng, latents, scale),
        provenance: Provenance::Explicit,
    }
}

pub fn random_params(rng: &mut ChaCha8Rng, latents: usize, bins: usize, scale: f64) -> ModelParams {
    let flat = logits(rng, 6 * latents + bins, scale);
    ModelParams::from_flat(latents, bins, &flat)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
