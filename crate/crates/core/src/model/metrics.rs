//! Evaluation metrics on a dataset split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{policy_predictions, Model};
use crate::datagen::DatasetRecord;
use crate::dsl::{r_mat_against, ExecLimits};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Fraction of demonstrated actions the policy predicts (teacher forced,
    /// conditioned on the posterior mean).
    pub token_acc: f64,
    /// Fraction of demonstrations predicted without a single error.
    pub seq_acc: f64,
    /// Mean prefix-match reward of the greedy decode of the posterior mean.
    pub val_r_mat: f64,
    /// Fraction of programs whose greedy decode is token-identical.
    pub exact_recon: f64,
    pub smoothness: Option<f64>,
    pub programs: usize,
}

pub fn policy_accuracy(model: &Model, records: &[DatasetRecord]) -> (f64, f64) {
    let enc = model.encoder();
    let parts: Vec<(usize, usize, usize, usize)> = records
        .par_iter()
        .map(|rec| {
            let (mu, _) = enc.encode(&rec.program.to_tokens());
            let mut acc = (0, 0, 0, 0);
            for d in &rec.rollouts {
                let pred = policy_predictions(model, &mu, &d.perceptions, &d.actions);
                let hits = pred.iter().zip(&d.actions).filter(|(a, b)| a == b).count();
                acc.0 += hits;
                acc.1 += d.actions.len();
                acc.2 += usize::from(hits == d.actions.len());
                acc.3 += 1;
            }
            acc
        })
        .collect();
    let (hit, tot, seq, n) = parts
        .into_iter()
        .fold((0, 0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3));
    (ratio(hit, tot), ratio(seq, n))
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// Mean r_mat and exact-match rate of greedy reconstructions.
pub fn reconstruction(model: &Model, records: &[DatasetRecord], limits: ExecLimits) -> (f64, f64) {
    let enc = model.encoder();
    let dec = model.decoder();
    let parts: Vec<(f64, bool)> = records
        .par_iter()
        .map(|rec| {
            let (mu, _) = enc.encode(&rec.program.to_tokens());
            let p = dec.greedy(&mu);
            let inits: Vec<_> = rec.rollouts.iter().map(|d| d.initial.clone()).collect();
            let targets: Vec<_> = rec.rollouts.iter().map(|d| d.actions.clone()).collect();
            (r_mat_against(&p, &inits, &targets, limits), p == rec.program)
        })
        .collect();
    let n = parts.len().max(1) as f64;
    (
        parts.iter().map(|x| x.0).sum::<f64>() / n,
        parts.iter().filter(|x| x.1).count() as f64 / n,
    )
}

/// For each program, decode the `k` nearest other posterior means and
/// average their r_mat against the program from its first stored start
/// state.
pub fn smoothness(model: &Model, records: &[DatasetRecord], k: usize, limits: ExecLimits) -> f64 {
    let enc = model.encoder();
    let dec = model.decoder();
    let mus: Vec<Vec<f64>> = records.par_iter().map(|r| enc.encode(&r.program.to_tokens()).0).collect();
    let decoded: Vec<_> = mus.par_iter().map(|m| dec.greedy(m)).collect();
    let scores: Vec<f64> = (0..records.len())
        .into_par_iter()
        .filter_map(|i| {
            let start = records[i].rollouts.first()?;
            let mut near: Vec<(f64, usize)> = (0..records.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = mus[i].iter().zip(&mus[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, j)
                })
                .collect();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            near.truncate(k);
            if near.is_empty() {
                return None;
            }
            let inits = [start.initial.clone()];
            let target = [start.actions.clone()];
            let s: f64 = near
                .iter()
                .map(|&(_, j)| r_mat_against(&decoded[j], &inits, &target, limits))
                .sum();
            Some(s / near.len() as f64)
        })
        .collect();
    scores.iter().sum::<f64>() / scores.len().max(1) as f64
}

pub fn eval_metrics(model: &Model, records: &[DatasetRecord], with_smoothness: bool) -> Metrics {
    let limits = ExecLimits::default();
    let (token_acc, seq_acc) = policy_accuracy(model, records);
    let (val_r_mat, exact_recon) = reconstruction(model, records, limits);
    Metrics {
        token_acc,
        seq_acc,
        val_r_mat,
        exact_recon,
        smoothness: with_smoothness.then(|| smoothness(model, records, 10, limits)),
        programs: records.len(),
    }
}
