//! Cross-entropy search over the latent space and the random-search
//! ablation. Both are generic over an [`Objective`] mapping latent vectors
//! to rewards; see [`objective`] for program-level objectives.

pub mod objective;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::dsl::Program;
use crate::error::HarnessError;
use crate::rng::{seeded, Rng};

pub use objective::{
    behavior_reconstruction_reward, reconstruction_eval_states, task_reward_fn, LatentFn, ProgramObjective,
    RECONSTRUCTION_BONUS,
};

/// Distribution of the initial center.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum InitDist {
    /// Every coordinate fixed at 1.
    #[serde(rename = "N(1,0)")]
    Ones,
    #[default]
    #[serde(rename = "N(0,I)")]
    Standard,
    /// Standard deviation 0.1.
    #[serde(rename = "N(0,0.1I)")]
    Narrow,
}

impl InitDist {
    pub fn sample(self, dim: usize, rng: &mut Rng) -> Vec<f64> {
        let std = match self {
            InitDist::Ones => return vec![1.0; dim],
            InitDist::Standard => 1.0,
            InitDist::Narrow => 0.1,
        };
        let n = Normal::new(0.0, std).expect("positive std");
        (0..dim).map(|_| n.sample(rng)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CemConfig {
    pub population: usize,
    pub sigma: f64,
    pub elite_frac: f64,
    pub exp_sigma_decay: bool,
    pub init: InitDist,
    pub max_iters: usize,
    /// Consecutive iterations the center must hold the maximum reward.
    pub patience: usize,
    pub eval_configs: usize,
}

impl Default for CemConfig {
    fn default() -> Self {
        CemConfig {
            population: 16,
            sigma: 0.25,
            elite_frac: 0.1,
            exp_sigma_decay: false,
            init: InitDist::Standard,
            max_iters: 1000,
            patience: 10,
            eval_configs: 10,
        }
    }
}

pub const SIGMA_FLOOR: f64 = 0.1;
pub const SIGMA_DECAY_ITERS: f64 = 500.0;

impl CemConfig {
    pub fn n_elite(&self) -> usize {
        (self.population as f64 * self.elite_frac).round() as usize
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.population == 0 {
            return Err(HarnessError::Config("population must be positive".into()));
        }
        let k = self.n_elite();
        if k < 1 || k > self.population {
            return Err(HarnessError::Config(format!(
                "elite count round({} * {}) = {k} outside [1, {}]",
                self.population, self.elite_frac, self.population
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(HarnessError::Config("sigma must be non-negative".into()));
        }
        if self.eval_configs == 0 {
            return Err(HarnessError::Config("eval_configs must be positive".into()));
        }
        Ok(())
    }

    /// Sampling scale at iteration `t` (0-based).
    pub fn sigma_at(&self, t: usize) -> f64 {
        if !self.exp_sigma_decay || self.sigma <= SIGMA_FLOOR {
            return self.sigma;
        }
        let frac = (t as f64 / SIGMA_DECAY_ITERS).min(1.0);
        (self.sigma * (SIGMA_FLOOR / self.sigma).powf(frac)).max(SIGMA_FLOOR)
    }
}

/// Reward of one latent vector, with the decoded program when there is one.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub reward: f64,
    pub program: Option<Program>,
}

pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, z: &[f64]) -> Evaluation;
    /// Known maximum reward; enables the convergence test.
    fn max_reward(&self) -> Option<f64> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterLog {
    pub iteration: usize,
    pub sigma: f64,
    pub mean_reward: f64,
    /// Best reward seen so far.
    pub best_reward: f64,
    pub center_reward: f64,
    pub center: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub best_reward: f64,
    pub best_z: Vec<f64>,
    pub best_program: Option<Program>,
    pub log: Vec<IterLog>,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
}

impl SearchResult {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("iteration,sigma,mean_reward,best_reward,center_reward\n");
        for r in &self.log {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.iteration, r.sigma, r.mean_reward, r.best_reward, r.center_reward
            );
        }
        s
    }

    pub fn trajectory_csv(&self) -> String {
        let d = self.log.first().map_or(0, |r| r.center.len());
        let mut s = String::from("iteration");
        for i in 0..d {
            let _ = write!(s, ",z{i}");
        }
        s.push('\n');
        for r in &self.log {
            let _ = write!(s, "{}", r.iteration);
            for x in &r.center {
                let _ = write!(s, ",{x}");
            }
            s.push('\n');
        }
        s
    }
}

fn evaluate_all<O: Objective + ?Sized>(obj: &O, zs: &[Vec<f64>]) -> Vec<Evaluation> {
    zs.par_iter().map(|z| obj.evaluate(z)).collect()
}

fn perturb(center: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    center
        .iter()
        .map(|c| {
            let e: f64 = rng.sample(rand_distr::StandardNormal);
            c + sigma * e
        })
        .collect()
}

/// Indices of the `k` best rewards, ties broken by index.
fn top_k(evals: &[Evaluation], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..evals.len()).collect();
    idx.sort_by(|&a, &b| evals[b].reward.total_cmp(&evals[a].reward).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Reward-weighted mean of the elites; negative rewards get zero weight and
/// a uniform mean is used when no elite has positive reward.
pub fn elite_mean(elites: &[&[f64]], rewards: &[f64]) -> Vec<f64> {
    let d = elites.first().map_or(0, |e| e.len());
    let w: Vec<f64> = rewards.iter().map(|r| r.max(0.0)).collect();
    let total: f64 = w.iter().sum();
    let w: Vec<f64> = if total > 0.0 && total.is_finite() {
        w.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / elites.len() as f64; elites.len()]
    };
    let mut out = vec![0.0; d];
    for (e, wi) in elites.iter().zip(&w) {
        for (o, x) in out.iter_mut().zip(e.iter()) {
            *o += wi * x;
        }
    }
    out
}

pub fn cem_search<O: Objective + ?Sized>(obj: &O, cfg: &CemConfig, seed: u64) -> Result<SearchResult, HarnessError> {
    cfg.validate()?;
    let mut rng = seeded(seed);
    let mut center = cfg.init.sample(obj.dim(), &mut rng);
    let k = cfg.n_elite();
    let target = obj.max_reward();
    let mut best = obj.evaluate(&center);
    let mut best_z = center.clone();
    let mut evaluations = 1;
    let mut log = Vec::new();
    let mut streak = 0;
    let mut converged = false;

    for t in 0..cfg.max_iters {
        let sigma = cfg.sigma_at(t);
        let pop: Vec<Vec<f64>> = (0..cfg.population).map(|_| perturb(&center, sigma, &mut rng)).collect();
        let evals = evaluate_all(obj, &pop);
        evaluations += pop.len();
        for (z, e) in pop.iter().zip(&evals) {
            if e.reward > best.reward {
                best = e.clone();
                best_z = z.clone();
            }
        }
        let elite = top_k(&evals, k);
        let ez: Vec<&[f64]> = elite.iter().map(|&i| pop[i].as_slice()).collect();
        let er: Vec<f64> = elite.iter().map(|&i| evals[i].reward).collect();
        center = elite_mean(&ez, &er);
        let c = obj.evaluate(&center);
        evaluations += 1;
        if c.reward > best.reward {
            best = c.clone();
            best_z = center.clone();
        }
        log.push(IterLog {
            iteration: t,
            sigma,
            mean_reward: evals.iter().map(|e| e.reward).sum::<f64>() / evals.len() as f64,
            best_reward: best.reward,
            center_reward: c.reward,
            center: center.clone(),
        });
        if let Some(m) = target {
            streak = if c.reward >= m - 1e-9 { streak + 1 } else { 0 };
            if streak >= cfg.patience {
                converged = true;
                break;
            }
        }
    }
    Ok(SearchResult {
        best_reward: best.reward,
        best_z,
        best_program: best.program,
        iterations: log.len(),
        log,
        converged,
        evaluations,
    })
}

/// One draw from the init distribution plus `n` perturbations around it;
/// returns the best.
pub fn random_search<O: Objective + ?Sized>(
    obj: &O,
    n: usize,
    sigma: f64,
    init: InitDist,
    seed: u64,
) -> Result<SearchResult, HarnessError> {
    if n == 0 {
        return Err(HarnessError::Config("random search needs at least one candidate".into()));
    }
    let mut rng = seeded(seed);
    let center = init.sample(obj.dim(), &mut rng);
    let pop: Vec<Vec<f64>> = (0..n).map(|_| perturb(&center, sigma, &mut rng)).collect();
    let evals = evaluate_all(obj, &pop);
    let i = top_k(&evals, 1)[0];
    let mean = evals.iter().map(|e| e.reward).sum::<f64>() / n as f64;
    let best = evals[i].clone();
    Ok(SearchResult {
        best_reward: best.reward,
        best_z: pop[i].clone(),
        best_program: best.program,
        log: vec![IterLog {
            iteration: 0,
            sigma,
            mean_reward: mean,
            best_reward: best.reward,
            center_reward: f64::NAN,
            center,
        }],
        converged: false,
        iterations: 1,
        evaluations: n,
    })
}
