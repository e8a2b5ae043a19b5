//! Experiment protocols, result tables and the HTTP request layer.

pub mod api;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::datagen::DatasetRecord;
use crate::dsl::{parse_text, ExecLimits, Program};
use crate::error::HarnessError;
use crate::model::Model;
use crate::rng::{derive_seed, seeded};
use crate::search::{
    behavior_reconstruction_reward, cem_search, random_search, reconstruction_eval_states, task_reward_fn, CemConfig,
    ProgramObjective, SearchResult, RECONSTRUCTION_BONUS,
};
use crate::world::{config_seed, mean_return_on, TaskInstance, TaskKind, TaskSpec};

const CORPUS: &str = include_str!("../../data/corpus.tsv");
const PRESETS: &str = include_str!("../../data/cem_presets.json");

pub const RECONSTRUCTION_TARGETS: [&str; 4] = ["WHILE", "IFELSE+WHILE", "2IF+IFELSE", "WHILE+2IF+IFELSE"];
pub const HARVESTER_POOL: usize = 10_000;
pub const GENERALIZE_SIZE: usize = 100;

/// Named reference programs: reconstruction targets and task ground truths.
#[derive(Clone, Debug)]
pub struct Corpus {
    entries: Vec<(String, Program)>,
}

impl Corpus {
    pub fn builtin() -> Corpus {
        Corpus::from_tsv(CORPUS).expect("bundled corpus parses")
    }

    pub fn from_tsv(text: &str) -> Result<Corpus, HarnessError> {
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, prog) = line
                .split_once('\t')
                .ok_or_else(|| HarnessError::Config(format!("corpus line without a tab: {line}")))?;
            entries.push((name.to_string(), parse_text(prog)?));
        }
        Ok(Corpus { entries })
    }

    pub fn get(&self, name: &str) -> Result<&Program, HarnessError> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| HarnessError::MissingProgram(name.to_string()))
    }

    pub fn ground_truth(&self, task: TaskKind) -> Result<&Program, HarnessError> {
        self.get(task.name())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Program)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Presets {
    pub version: u32,
    pub reconstruct: BTreeMap<String, CemConfig>,
    pub solve: BTreeMap<String, CemConfig>,
}

impl Presets {
    pub fn builtin() -> Presets {
        serde_json::from_str(PRESETS).expect("bundled presets parse")
    }

    pub fn for_target(&self, name: &str) -> CemConfig {
        self.reconstruct.get(name).cloned().unwrap_or_default()
    }

    pub fn for_task(&self, task: TaskKind) -> CemConfig {
        self.solve.get(task.name()).cloned().unwrap_or_default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Cem,
    Rand8,
    Rand64,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cem => "cem",
            Method::Rand8 => "rand-8",
            Method::Rand64 => "rand-64",
        }
    }
}

/// Settings shared by every experiment; each run reads the fields it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub seeds: usize,
    pub method: Method,
    /// Overrides the per-target / per-task preset when set.
    pub cem: Option<CemConfig>,
    pub targets: Vec<String>,
    pub tasks: Vec<TaskKind>,
    pub eval_configs: usize,
    pub unseen_task: TaskKind,
    pub fractions: Vec<f64>,
    pub harvester_pool: usize,
    pub generalize_size: usize,
    pub interpolate: Option<(String, String)>,
    pub steps: usize,
    pub split: crate::datagen::Split,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            checkpoint: None,
            dataset: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            seeds: 5,
            method: Method::Cem,
            cem: None,
            targets: RECONSTRUCTION_TARGETS.iter().map(|s| s.to_string()).collect(),
            tasks: TaskKind::ALL.to_vec(),
            eval_configs: 10,
            unseen_task: TaskKind::TopOff,
            fractions: vec![0.75, 0.5, 0.25, 0.1, 0.05],
            harvester_pool: HARVESTER_POOL,
            generalize_size: GENERALIZE_SIZE,
            interpolate: None,
            steps: 8,
            split: crate::datagen::Split::Val,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub target: String,
    pub seed: u64,
    pub reward: f64,
    pub iterations: usize,
    pub converged: bool,
    pub program: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub target: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// One entry per (method, target) in first-seen order, then a per-method
    /// average over targets labelled `avg`.
    pub fn summary(&self) -> Vec<Summary> {
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            let k = (r.method.clone(), r.target.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let mut out: Vec<Summary> = keys
            .into_iter()
            .map(|(method, target)| {
                let xs: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == method && r.target == target)
                    .map(|r| r.reward)
                    .collect();
                let (mean, std) = mean_std(&xs);
                Summary { method, target, n: xs.len(), mean, std }
            })
            .collect();
        let mut methods: Vec<String> = Vec::new();
        for s in &out {
            if !methods.contains(&s.method) {
                methods.push(s.method.clone());
            }
        }
        for m in methods {
            let means: Vec<f64> = out.iter().filter(|s| s.method == m).map(|s| s.mean).collect();
            if means.len() > 1 {
                let (mean, std) = mean_std(&means);
                out.push(Summary {
                    method: m,
                    target: "avg".into(),
                    n: means.len(),
                    mean,
                    std,
                });
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,target,seed,reward,iterations,converged,program\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},\"{}\"",
                r.method, r.target, r.seed, r.reward, r.iterations, r.converged, r.program
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,target,n,mean,std\n");
        for r in self.summary() {
            let _ = writeln!(s, "{},{},{},{:.4},{:.4}", r.method, r.target, r.n, r.mean, r.std);
        }
        s
    }
}

fn row(method: &str, target: &str, seed: u64, r: &SearchResult) -> ResultRow {
    ResultRow {
        method: method.to_string(),
        target: target.to_string(),
        seed,
        reward: r.best_reward,
        iterations: r.iterations,
        converged: r.converged,
        program: r.best_program.as_ref().map(|p| p.to_text()).unwrap_or_default(),
    }
}

fn search<F: Fn(&Program) -> f64 + Sync>(
    model: &Model,
    reward: F,
    max: f64,
    method: Method,
    cem: &CemConfig,
    seed: u64,
) -> Result<SearchResult, HarnessError> {
    let obj = ProgramObjective::new(model.decoder(), reward, Some(max));
    match method {
        Method::Cem => cem_search(&obj, cem, seed),
        Method::Rand8 => random_search(&obj, 8, cem.sigma, cem.init, seed),
        Method::Rand64 => random_search(&obj, 64, cem.sigma, cem.init, seed),
    }
}

/// Reconstruction search for one target and seed; the evaluation states are
/// fixed per (target, seed).
pub fn reconstruct_once(
    model: &Model,
    target: &Program,
    cem: &CemConfig,
    method: Method,
    seed: u64,
) -> Result<SearchResult, HarnessError> {
    let states = reconstruction_eval_states(target, cem.eval_configs, derive_seed(seed, 0xe7a1));
    let reward = behavior_reconstruction_reward(target, states, ExecLimits::for_horizon(100));
    search(model, reward, 1.0 + RECONSTRUCTION_BONUS, method, cem, seed)
}

pub fn run_reconstruct(model: &Model, cfg: &ExperimentConfig) -> Result<ResultTable, HarnessError> {
    let corpus = Corpus::builtin();
    let presets = Presets::builtin();
    let mut table = ResultTable::default();
    for name in &cfg.targets {
        let target = corpus.get(name)?;
        let cem = cfg.cem.clone().unwrap_or_else(|| presets.for_target(name));
        for s in 0..cfg.seeds as u64 {
            let r = reconstruct_once(model, target, &cem, cfg.method, derive_seed(cfg.seed, s))?;
            table.rows.push(row(cfg.method.name(), name, s, &r));
        }
    }
    Ok(table)
}

pub fn run_solve(model: &Model, cfg: &ExperimentConfig) -> Result<ResultTable, HarnessError> {
    let presets = Presets::builtin();
    let mut table = ResultTable::default();
    for &task in &cfg.tasks {
        let cem = cfg.cem.clone().unwrap_or_else(|| presets.for_task(task));
        let spec = TaskSpec::new(task);
        for s in 0..cfg.seeds as u64 {
            let seed = derive_seed(cfg.seed, s);
            let reward = task_reward_fn(&spec, cem.eval_configs, derive_seed(seed, 0xc0f))?;
            let r = search(model, reward, 1.0, cfg.method, &cem, seed)?;
            table.rows.push(row(cfg.method.name(), task.name(), s, &r));
        }
    }
    Ok(table)
}

/// Scores fixed programs on default-size and enlarged instances. Rows are
/// labelled `<source>@<h>x<w>`.
pub fn run_generalize(
    programs: &[(TaskKind, String, Program)],
    cfg: &ExperimentConfig,
) -> Result<ResultTable, HarnessError> {
    let mut table = ResultTable::default();
    for (task, source, program) in programs {
        let (dh, dw) = task.default_dims();
        let sizes = [(dh, dw), (cfg.generalize_size, cfg.generalize_size)];
        for (h, w) in sizes {
            let spec = TaskSpec::with_size(*task, h, w)?;
            for s in 0..cfg.seeds as u64 {
                let instances = (0..cfg.eval_configs)
                    .map(|i| spec.sample(config_seed(derive_seed(cfg.seed, s), i)))
                    .collect::<Result<Vec<_>, _>>()?;
                table.rows.push(ResultRow {
                    method: format!("{source}@{h}x{w}"),
                    target: task.name().to_string(),
                    seed: s,
                    reward: mean_return_on(&instances, program),
                    iterations: 0,
                    converged: false,
                    program: program.to_text(),
                });
            }
        }
    }
    Ok(table)
}

/// Ground-truth programs for the generalization tasks.
pub fn ground_truth_programs(tasks: &[TaskKind]) -> Result<Vec<(TaskKind, String, Program)>, HarnessError> {
    let corpus = Corpus::builtin();
    tasks
        .iter()
        .map(|&t| Ok((t, "ground-truth".to_string(), corpus.ground_truth(t)?.clone())))
        .collect()
}

pub const GENERALIZE_TASKS: [TaskKind; 5] = [
    TaskKind::StairClimber,
    TaskKind::Maze,
    TaskKind::FourCorner,
    TaskKind::TopOff,
    TaskKind::Harvester,
];

/// Every configuration of the task's pool: all masks when the space is small
/// enough to enumerate, otherwise `pool` seeded random masks.
pub fn config_pool(spec: &TaskSpec, pool: usize, seed: u64) -> Result<Vec<TaskInstance>, HarnessError> {
    let bits = spec
        .config_bits()
        .ok_or_else(|| HarnessError::Config(format!("{} has no configuration space", spec.kind.name())))?;
    if bits <= 16 {
        (0..1usize << bits)
            .map(|m| {
                let mask: Vec<bool> = (0..bits).map(|b| m >> b & 1 == 1).collect();
                Ok(spec.instance_from_mask(&mask, m as u64)?)
            })
            .collect()
    } else {
        use rand::Rng as _;
        (0..pool)
            .map(|i| {
                let mut rng = seeded(derive_seed(seed, i as u64));
                let mask: Vec<bool> = (0..bits).map(|_| rng.random_bool(0.5)).collect();
                Ok(spec.instance_from_mask(&mask, i as u64)?)
            })
            .collect()
    }
}

/// Seeded subset of `fraction` of the pool indices (at least one).
pub fn config_subset(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>, HarnessError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(HarnessError::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    idx.truncate(((n as f64 * fraction).round() as usize).max(1));
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnseenSummary {
    pub fraction: f64,
    pub mean: f64,
    pub std: f64,
    /// Relative to the full-pool run, in percent.
    pub pct_change: f64,
}

/// Searches with evaluation configs drawn from a subset of the pool, then
/// scores the found program on the whole pool. The full-pool baseline
/// (fraction 1) is always included.
pub fn run_unseen_config(
    model: &Model,
    cfg: &ExperimentConfig,
) -> Result<(ResultTable, Vec<UnseenSummary>), HarnessError> {
    let task = cfg.unseen_task;
    if !matches!(task, TaskKind::TopOff | TaskKind::Harvester) {
        return Err(HarnessError::Config(format!("{} has no configuration split", task.name())));
    }
    let mut fractions = vec![1.0];
    for &f in &cfg.fractions {
        config_subset(1, f, 0)?;
        if f != 1.0 {
            fractions.push(f);
        }
    }
    let spec = TaskSpec::new(task);
    let pool = config_pool(&spec, cfg.harvester_pool, derive_seed(cfg.seed, 0x9001))?;
    let cem = cfg.cem.clone().unwrap_or_else(|| Presets::builtin().for_task(task));
    let mut table = ResultTable::default();
    let mut sums = Vec::new();
    for &f in &fractions {
        let mut rewards = Vec::new();
        for s in 0..cfg.seeds as u64 {
            let seed = derive_seed(cfg.seed, s);
            let subset = config_subset(pool.len(), f, derive_seed(seed, 0x5b5e7))?;
            let mut rng = seeded(derive_seed(seed, 0xc0f));
            use rand::seq::IndexedRandom;
            let eval: Vec<TaskInstance> = (0..cem.eval_configs)
                .map(|_| pool[*subset.choose(&mut rng).expect("non-empty subset")].clone())
                .collect();
            let r = search(model, |p: &Program| mean_return_on(&eval, p), 1.0, cfg.method, &cem, seed)?;
            let program = r.best_program.clone().expect("program search decodes");
            let full = mean_return_on(&pool, &program);
            rewards.push(full);
            let mut rr = row(&format!("fraction={f}"), task.name(), s, &r);
            rr.reward = full;
            table.rows.push(rr);
        }
        let (mean, std) = mean_std(&rewards);
        sums.push(UnseenSummary { fraction: f, mean, std, pct_change: 0.0 });
    }
    let base = sums[0].mean;
    for s in &mut sums {
        s.pct_change = if base == 0.0 { 0.0 } else { 100.0 * (s.mean - base) / base };
    }
    Ok((table, sums))
}

/// Greedy decodes of `steps` evenly spaced points between the latent means
/// of `a` and `b`, endpoints included. Swapping the endpoints reverses the
/// list exactly.
pub fn run_interpolate(model: &Model, a: &Program, b: &Program, steps: usize) -> Vec<(f64, Program)> {
    let (ma, _) = model.encode(a);
    let (mb, _) = model.encode(b);
    let dec = model.decoder();
    let n = steps.max(2) - 1;
    (0..=n)
        .map(|k| {
            let (wa, wb) = ((n - k) as f64 / n as f64, k as f64 / n as f64);
            let z: Vec<f64> = ma.iter().zip(&mb).map(|(x, y)| wa * x + wb * y).collect();
            (wb, dec.greedy(&z))
        })
        .collect()
}

pub fn interpolation_csv(rows: &[(f64, Program)]) -> String {
    let mut s = String::from("t,program\n");
    for (t, p) in rows {
        let _ = writeln!(s, "{t},\"{}\"", p.to_text());
    }
    s
}

/// `id,z0,...` rows of latent means.
pub fn export_latents(model: &Model, records: &[DatasetRecord]) -> String {
    let enc = model.encoder();
    let d = model.latent_dim();
    let mut s = String::from("id");
    for i in 0..d {
        let _ = write!(s, ",z{i}");
    }
    s.push('\n');
    for r in records {
        let (mu, _) = enc.encode(&r.tokens());
        s.push_str(&r.id);
        for x in mu {
            let _ = write!(s, ",{x}");
        }
        s.push('\n');
    }
    s
}

pub fn file_hash(path: &Path) -> Result<String, HarnessError> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// JSON record written next to every run's CSV outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub checkpoint_sha256: Option<String>,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
    pub seconds: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_and_presets_load() {
        let c = Corpus::builtin();
        for t in RECONSTRUCTION_TARGETS {
            c.get(t).unwrap();
        }
        for k in TaskKind::ALL {
            c.ground_truth(k).unwrap();
        }
        let p = Presets::builtin();
        for k in TaskKind::ALL {
            assert!(p.solve.contains_key(k.name()), "{}", k.name());
            p.for_task(k).validate().unwrap();
        }
        for t in RECONSTRUCTION_TARGETS {
            p.for_target(t).validate().unwrap();
        }
        assert_eq!(p.for_task(TaskKind::Maze).init, crate::search::InitDist::Ones);
    }

    #[test]
    fn summary_mean_std() {
        let mk = |t: &str, r: f64| ResultRow {
            method: "cem".into(),
            target: t.into(),
            seed: 0,
            reward: r,
            iterations: 0,
            converged: false,
            program: String::new(),
        };
        let t = ResultTable {
            rows: vec![mk("a", 1.0), mk("a", 0.0), mk("b", 0.5), mk("b", 0.5)],
        };
        let s = t.summary();
        assert_eq!(s.len(), 3);
        assert_eq!((s[0].mean, s[0].std), (0.5, 0.5));
        assert_eq!((s[1].mean, s[1].std), (0.5, 0.0));
        assert_eq!(s[2].target, "avg");
    }

    #[test]
    fn subsets() {
        assert!(config_subset(10, 0.0, 1).is_err());
        assert!(config_subset(10, 1.5, 1).is_err());
        assert_eq!(config_subset(512, 1.0, 3).unwrap().len(), 512);
        assert_eq!(config_subset(512, 0.05, 3).unwrap().len(), 26);
        assert_eq!(config_subset(512, 0.25, 3).unwrap(), config_subset(512, 0.25, 3).unwrap());
        assert_eq!(config_subset(10, 0.01, 3).unwrap().len(), 1);
    }

    #[test]
    fn topoff_pool_is_exhaustive() {
        let spec = TaskSpec::new(TaskKind::TopOff);
        let pool = config_pool(&spec, 0, 0).unwrap();
        assert_eq!(pool.len(), 1 << spec.config_bits().unwrap());
    }
}
