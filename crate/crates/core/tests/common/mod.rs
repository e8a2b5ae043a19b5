#![allow(dead_code)]

pub mod reference;

use progsynth::datagen::{collect_rollouts, sample_program, DatasetRecord, GenConfig};
use progsynth::model::{Model, ModelConfig};
use progsynth::rng::{derive_seed, seeded};
use rand::Rng as _;

/// Small covered programs with a few demos each.
pub fn toy_records(n: usize, seed: u64) -> Vec<DatasetRecord> {
    let cfg = GenConfig {
        rollouts_per_program: 3,
        max_program_tokens: 24,
        ..GenConfig::default()
    };
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < n {
        let mut rng = seeded(derive_seed(seed, i));
        i += 1;
        let Ok(program) = sample_program(&cfg, &mut rng) else { continue };
        let Some(rollouts) = collect_rollouts(&program, &cfg, &mut rng) else { continue };
        out.push(DatasetRecord {
            id: progsynth::datagen::program_id(&program),
            program,
            rollouts: rollouts.into_iter().map(Into::into).collect(),
        });
    }
    out
}

pub fn toy_model(seed: u64) -> Model {
    let cfg = ModelConfig {
        embed: 4,
        hidden: 5,
        latent: 3,
        ..ModelConfig::desk()
    };
    let mut m = Model::new(cfg, seed).unwrap();
    // Break the symmetry of zero-initialized biases so every block gets signal.
    let mut rng = seeded(seed ^ 0xb1a5);
    m.params.iter_mut().for_each(|p| *p += rng.random_range(-0.2..0.2));
    m
}

/// Worst relative error between `analytic` and central differences of `f`
/// over the given parameter indices. Coordinates where both sides are below
/// `floor` in magnitude are compared absolutely against the floor.
pub fn grad_check(model: &Model, analytic: &[f64], idx: &[usize], f: impl Fn(&Model) -> f64) -> f64 {
    let h = 1e-5;
    let floor = 1e-7;
    let mut worst: f64 = 0.0;
    for &i in idx {
        let mut plus = model.clone();
        plus.params[i] += h;
        let mut minus = model.clone();
        minus.params[i] -= h;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(floor);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

/// Spread of indices touching every parameter block.
pub fn sample_indices(n_params: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded(seed);
    let mut idx: Vec<usize> = (0..count).map(|_| rng.random_range(0..n_params)).collect();
    idx.extend((0..n_params).step_by((n_params / 40).max(1)));
    idx.sort_unstable();
    idx.dedup();
    idx
}
