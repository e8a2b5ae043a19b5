//! Alternating trainer: one supervised epoch (program + latent losses),
//! then as many REINFORCE updates on the behavior loss, repeated.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::time::Instant;

use super::{eval_metrics, loss_behavior, standard_normal, supervised_loss, LossWeights, Metrics, Model, ModelConfig};
use crate::datagen::DatasetRecord;
use crate::dsl::ExecLimits;
use crate::error::ModelError;
use crate::nn::{clip_grad_norm, Adam, AdamConfig};
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub beta: f64,
    pub lambda_program: f64,
    pub lambda_behavior: f64,
    pub lambda_latent: f64,
    pub lr_supervised: f64,
    pub lr_rl: f64,
    pub batch_size: usize,
    /// Number of supervised/behavior alternations.
    pub rounds: usize,
    pub baseline_decay: f64,
    pub grad_clip: Option<f64>,
    /// Evaluate on at most this many validation programs.
    pub eval_limit: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::desk(),
            beta: 0.1,
            lambda_program: 1.0,
            lambda_behavior: 1.0,
            lambda_latent: 1.0,
            lr_supervised: 1e-3,
            lr_rl: 5e-4,
            batch_size: 64,
            rounds: 4,
            baseline_decay: 0.99,
            grad_clip: Some(5.0),
            eval_limit: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Preset for the 5k-program desk dataset.
    pub fn desk() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            rounds: 12,
            eval_limit: Some(300),
            ..TrainConfig::default()
        }
    }

    pub fn full() -> TrainConfig {
        TrainConfig {
            model: ModelConfig::full(),
            batch_size: 256,
            rounds: 50,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.model.validate()?;
        let nonneg = [self.beta, self.lambda_program, self.lambda_behavior, self.lambda_latent];
        if nonneg.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(ModelError::Config("beta and lambdas must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(ModelError::Config("baseline_decay must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Short content hash recorded in checkpoints.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub round: usize,
    pub phase: String,
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
    pub latent_ce: f64,
    pub reward: f64,
    pub token_acc: f64,
    pub seq_acc: f64,
    pub val_r_mat: f64,
    pub exact_recon: f64,
    pub seconds: f64,
}

impl LogRow {
    pub const CSV_HEADER: &'static str =
        "epoch,phase,loss,nll,kl,latent_ce,reward,token_acc,seq_acc,val_r_mat,exact_recon,seconds";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.2}",
            self.round,
            self.phase,
            self.loss,
            self.nll,
            self.kl,
            self.latent_ce,
            self.reward,
            self.token_acc,
            self.seq_acc,
            self.val_r_mat,
            self.exact_recon,
            self.seconds
        )
    }
}

pub struct TrainOutcome {
    pub best: Model,
    pub best_round: usize,
    pub best_phase: String,
    pub best_metrics: Metrics,
    pub last: Model,
    pub log: Vec<LogRow>,
}

/// Checkpoint selection score.
fn selection_score(m: &Metrics) -> f64 {
    0.5 * (m.token_acc + m.val_r_mat)
}

#[derive(Default)]
struct PhaseStats {
    loss: f64,
    nll: f64,
    kl: f64,
    ce: f64,
    reward: f64,
    batches: usize,
}

impl PhaseStats {
    fn row(&self, round: usize, phase: &str, m: &Metrics, seconds: f64) -> LogRow {
        let n = self.batches.max(1) as f64;
        LogRow {
            round,
            phase: phase.to_string(),
            loss: self.loss / n,
            nll: self.nll / n,
            kl: self.kl / n,
            latent_ce: self.ce / n,
            reward: self.reward / n,
            token_acc: m.token_acc,
            seq_acc: m.seq_acc,
            val_r_mat: m.val_r_mat,
            exact_recon: m.exact_recon,
            seconds,
        }
    }
}

fn check(loss: f64, grad: &[f64], round: usize, phase: &str) -> Result<(), ModelError> {
    if !loss.is_finite() {
        return Err(ModelError::Diverged {
            epoch: round,
            phase: phase.into(),
            detail: format!("loss is {loss}"),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(ModelError::Diverged {
            epoch: round,
            phase: phase.into(),
            detail: format!("gradient entry {i} is {}", grad[i]),
        });
    }
    Ok(())
}

pub fn train(
    cfg: &TrainConfig,
    train_set: &[DatasetRecord],
    val_set: &[DatasetRecord],
    mut on_row: impl FnMut(&LogRow, &Model),
) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::Config("empty training split".into()));
    }
    let val = &val_set[..cfg.eval_limit.unwrap_or(val_set.len()).min(val_set.len())];
    let mut model = Model::new(cfg.model, derive_seed(cfg.seed, 0))?;
    let mut adam_sup = Adam::new(AdamConfig::with_lr(cfg.lr_supervised), model.num_params());
    let mut adam_rl = Adam::new(AdamConfig::with_lr(cfg.lr_rl), model.num_params());
    let weights = LossWeights {
        program: cfg.lambda_program,
        latent: cfg.lambda_latent,
        beta: cfg.beta,
    };
    let d = cfg.model.latent;
    let limits = ExecLimits::default();
    let mut baseline: Option<f64> = None;
    let mut log = Vec::new();
    let mut best: Option<(f64, LogRow, Metrics, Model)> = None;
    let mut consider = |row: &LogRow, m: Metrics, model: &Model| {
        let s = selection_score(&m);
        if best.as_ref().is_none_or(|b| s > b.0) {
            best = Some((s, row.clone(), m, model.clone()));
        }
    };
    let updates = train_set.len().div_ceil(cfg.batch_size);

    for round in 1..=cfg.rounds {
        if cfg.lambda_program > 0.0 || cfg.lambda_latent > 0.0 {
            let t0 = Instant::now();
            let mut rng = seeded(derive_seed(cfg.seed, 2 * round as u64));
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            order.shuffle(&mut rng);
            let mut st = PhaseStats::default();
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&DatasetRecord> = chunk.iter().map(|&i| &train_set[i]).collect();
                let eps: Vec<Vec<f64>> = batch.iter().map(|_| standard_normal(d, &mut rng)).collect();
                let mut out = supervised_loss(&model, &batch, &eps, weights);
                check(out.loss, &out.grad, round, "supervised")?;
                if let Some(c) = cfg.grad_clip {
                    clip_grad_norm(&mut out.grad, c);
                }
                adam_sup.step(&mut model.params, &out.grad);
                st.loss += out.loss;
                st.nll += out.nll;
                st.kl += out.kl;
                st.ce += out.latent_ce;
                st.batches += 1;
            }
            let m = eval_metrics(&model, val, false);
            let row = st.row(round, "supervised", &m, t0.elapsed().as_secs_f64());
            on_row(&row, &model);
            consider(&row, m, &model);
            log.push(row);
        }
        if cfg.lambda_behavior > 0.0 {
            let t0 = Instant::now();
            let mut rng = seeded(derive_seed(cfg.seed, 2 * round as u64 + 1));
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            order.shuffle(&mut rng);
            let mut st = PhaseStats::default();
            for (u, chunk) in order.chunks(cfg.batch_size).take(updates).enumerate() {
                let batch: Vec<&DatasetRecord> = chunk.iter().map(|&i| &train_set[i]).collect();
                let eps: Vec<Vec<f64>> = batch.iter().map(|_| standard_normal(d, &mut rng)).collect();
                let sample_seed = derive_seed(cfg.seed ^ 0x5eed, (round * updates + u) as u64);
                let b = baseline.unwrap_or(0.0);
                let mut out = loss_behavior(&model, &batch, &eps, b, sample_seed, limits);
                let mean_r = out.rewards.iter().sum::<f64>() / out.rewards.len().max(1) as f64;
                // The first batch only seeds the baseline.
                if baseline.is_some() {
                    out.grad.iter_mut().for_each(|g| *g *= cfg.lambda_behavior);
                    check(out.loss, &out.grad, round, "behavior")?;
                    if let Some(c) = cfg.grad_clip {
                        clip_grad_norm(&mut out.grad, c);
                    }
                    adam_rl.step(&mut model.params, &out.grad);
                }
                baseline = Some(match baseline {
                    None => mean_r,
                    Some(b) => cfg.baseline_decay * b + (1.0 - cfg.baseline_decay) * mean_r,
                });
                st.loss += out.loss;
                st.reward += mean_r;
                st.batches += 1;
            }
            let m = eval_metrics(&model, val, false);
            let row = st.row(round, "behavior", &m, t0.elapsed().as_secs_f64());
            on_row(&row, &model);
            consider(&row, m, &model);
            log.push(row);
        }
        if !model.check_finite() {
            return Err(ModelError::Diverged {
                epoch: round,
                phase: "update".into(),
                detail: "non-finite parameters".into(),
            });
        }
    }
    let (best_row, best_metrics, best_model) = match best {
        Some((_, row, m, model)) => (Some(row), m, model),
        None => (None, Metrics::default(), model.clone()),
    };
    Ok(TrainOutcome {
        best: best_model,
        best_round: best_row.as_ref().map_or(0, |r| r.round),
        best_phase: best_row.map_or_else(String::new, |r| r.phase),
        best_metrics,
        last: model,
        log,
    })
}
