//! Shared fixtures for the benchmarks.

use progsynth::datagen::{random_world, sample_program, GenConfig};
use progsynth::model::{Model, ModelConfig};
use progsynth::rng::{derive_seed, seeded};
use progsynth::{GridState, Program};

/// `n` sampled programs paired with a random start state each.
pub fn program_state_pairs(n: usize, seed: u64) -> Vec<(Program, GridState)> {
    let cfg = GenConfig::default();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while out.len() < n {
        let mut rng = seeded(derive_seed(seed, i));
        i += 1;
        if let Ok(p) = sample_program(&cfg, &mut rng) {
            let s = random_world(&cfg, &mut rng);
            out.push((p, s));
        }
    }
    out
}

/// Untrained model at the desk configuration.
pub fn desk_model(seed: u64) -> Model {
    Model::new(ModelConfig::desk(), seed).expect("desk config is valid")
}
