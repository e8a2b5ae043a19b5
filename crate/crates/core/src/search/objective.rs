use std::collections::HashMap;
use std::sync::Mutex;

use super::{Evaluation, Objective};
use crate::datagen::{collect_rollouts, random_world, GenConfig};
use crate::dsl::{execute_actions, r_mat_against, ExecLimits, Program};
use crate::error::WorldError;
use crate::model::Decoder;
use crate::rng::seeded;
use crate::world::{mean_return_on, GridState, TaskSpec};

/// Constant syntax bonus: every decoded program is valid.
pub const RECONSTRUCTION_BONUS: f64 = 0.1;

/// Decodes latents greedily and scores the program. Rewards are memoized
/// per program text, so the reward function must be pure.
pub struct ProgramObjective<'a, F> {
    pub decoder: Decoder<'a>,
    reward: F,
    max: Option<f64>,
    cache: Mutex<HashMap<String, f64>>,
}

impl<'a, F: Fn(&Program) -> f64 + Sync> ProgramObjective<'a, F> {
    pub fn new(decoder: Decoder<'a>, reward: F, max: Option<f64>) -> Self {
        ProgramObjective {
            decoder,
            reward,
            max,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn distinct_programs(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }
}

impl<F: Fn(&Program) -> f64 + Sync> Objective for ProgramObjective<'_, F> {
    fn dim(&self) -> usize {
        self.decoder.model.latent_dim()
    }

    fn evaluate(&self, z: &[f64]) -> Evaluation {
        let program = self.decoder.greedy(z);
        let key = program.to_text();
        let hit = self.cache.lock().expect("cache lock").get(&key).copied();
        let reward = match hit {
            Some(r) => r,
            None => {
                let r = (self.reward)(&program);
                self.cache.lock().expect("cache lock").insert(key, r);
                r
            }
        };
        Evaluation {
            reward,
            program: Some(program),
        }
    }

    fn max_reward(&self) -> Option<f64> {
        self.max
    }
}

/// Plain function of the latent vector, with no decoding.
pub struct LatentFn<F> {
    pub dim: usize,
    pub f: F,
    pub max: Option<f64>,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Objective for LatentFn<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, z: &[f64]) -> Evaluation {
        Evaluation {
            reward: (self.f)(z),
            program: None,
        }
    }

    fn max_reward(&self) -> Option<f64> {
        self.max
    }
}

/// Fixed start states for reconstructing `target`: covering states when the
/// coverage procedure succeeds, random worlds otherwise.
pub fn reconstruction_eval_states(target: &Program, n: usize, seed: u64) -> Vec<GridState> {
    let cfg = GenConfig {
        rollouts_per_program: n,
        ..GenConfig::default()
    };
    let mut rng = seeded(seed);
    match collect_rollouts(target, &cfg, &mut rng) {
        Some(r) => r.into_iter().map(|r| r.initial).collect(),
        None => (0..n).map(|_| random_world(&cfg, &mut rng)).collect(),
    }
}

/// r_mat against the target's traces on `states`, plus the syntax bonus.
pub fn behavior_reconstruction_reward(
    target: &Program,
    states: Vec<GridState>,
    limits: ExecLimits,
) -> impl Fn(&Program) -> f64 + Sync {
    let traces: Vec<_> = states.iter().map(|s| execute_actions(target, s, limits)).collect();
    move |candidate: &Program| r_mat_against(candidate, &states, &traces, limits) + RECONSTRUCTION_BONUS
}

/// Mean task return over `n_configs` instances fixed for the whole search.
pub fn task_reward_fn(spec: &TaskSpec, n_configs: usize, seed: u64) -> Result<impl Fn(&Program) -> f64 + Sync, WorldError> {
    let instances = (0..n_configs.max(1))
        .map(|i| spec.sample(crate::world::config_seed(seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(move |p: &Program| mean_return_on(&instances, p))
}
