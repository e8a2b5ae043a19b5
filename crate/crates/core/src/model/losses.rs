//! The three training objectives with hand-derived gradients.
//!
//! * program: teacher-forced token NLL of the masked decoder plus a
//!   β-weighted KL to the standard normal prior,
//! * latent: per-step cross-entropy of the policy against demonstrated
//!   actions,
//! * behavior: REINFORCE on the prefix-match reward of a sampled decode.
//!
//! All are batch means. Gradients reach the encoder through the
//! reparameterized latent.

use rayon::prelude::*;

use super::{
    decoder_forward, encoder_forward, obs_columns, policy_gi, policy_gz, policy_logits, DecodeMode, DecoderRun, Drive,
    EncoderRun, Model, Tables,
};
use crate::datagen::{DatasetRecord, Demo};
use crate::dsl::{parse, r_mat_against, ExecLimits, Token};
use crate::nn::{self, axpy, matvec_t_add, outer_add};
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the program reconstruction term.
    pub program: f64,
    /// Weight of the latent behavior (policy) term.
    pub latent: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, Default)]
pub struct BatchLoss {
    pub loss: f64,
    /// Mean token NLL per program.
    pub nll: f64,
    pub kl: f64,
    /// Mean over programs of the per-rollout summed action cross-entropy.
    pub latent_ce: f64,
    /// Rewards of the sampled decodes (behavior loss only), in batch order.
    pub rewards: Vec<f64>,
    pub grad: Vec<f64>,
}

struct Acc {
    grad: Vec<f64>,
    tab_enc: Vec<f64>,
    tab_dec: Vec<f64>,
    loss: f64,
    nll: f64,
    kl: f64,
    ce: f64,
    rewards: Vec<f64>,
}

impl Acc {
    fn new(model: &Model) -> Acc {
        let t = model.cfg.vocab * 3 * model.cfg.hidden;
        Acc {
            grad: vec![0.0; model.num_params()],
            tab_enc: vec![0.0; t],
            tab_dec: vec![0.0; t],
            loss: 0.0,
            nll: 0.0,
            kl: 0.0,
            ce: 0.0,
            rewards: Vec::new(),
        }
    }

    fn merge(&mut self, o: Acc) {
        axpy(1.0, &o.grad, &mut self.grad);
        axpy(1.0, &o.tab_enc, &mut self.tab_enc);
        axpy(1.0, &o.tab_dec, &mut self.tab_dec);
        self.loss += o.loss;
        self.nll += o.nll;
        self.kl += o.kl;
        self.ce += o.ce;
        self.rewards.extend(o.rewards);
    }

    /// Pushes the table gradients back into the embedding and input weights.
    fn finish(mut self, model: &Model) -> BatchLoss {
        let (l, p) = (&model.layout, &model.params);
        let g3 = 3 * model.cfg.hidden;
        for v in 0..model.cfg.vocab {
            let d = &self.tab_enc[v * g3..(v + 1) * g3];
            if d.iter().any(|x| *x != 0.0) {
                outer_add(&mut self.grad, l.enc.w_ih, 0, d, l.enc_emb.row(p, v));
                axpy(1.0, d, l.enc.b_ih.of_mut(&mut self.grad));
                matvec_t_add(p, l.enc.w_ih, 0, d, l.enc_emb.row_mut(&mut self.grad, v));
            }
            let d = &self.tab_dec[v * g3..(v + 1) * g3];
            if d.iter().any(|x| *x != 0.0) {
                outer_add(&mut self.grad, l.dec.w_ih, 0, d, l.dec_emb.row(p, v));
                matvec_t_add(p, l.dec.w_ih, 0, d, l.dec_emb.row_mut(&mut self.grad, v));
            }
        }
        BatchLoss {
            loss: self.loss,
            nll: self.nll,
            kl: self.kl,
            latent_ce: self.ce,
            rewards: self.rewards,
            grad: self.grad,
        }
    }
}

/// Backprop through a decoder run where each real choice contributes
/// `w * (probs - onehot(chosen))` to its logits gradient.
fn decoder_backward(model: &Model, run: &DecoderRun, w: f64, acc: &mut Acc, dz: &mut [f64]) {
    let (l, p) = (&model.layout, &model.params);
    let (h_dim, e_dim, g3) = (model.cfg.hidden, model.cfg.embed, 3 * model.cfg.hidden);
    let mut choice_at = vec![None; run.caches.len()];
    for (i, c) in run.choices.iter().enumerate() {
        choice_at[c.t] = Some(i);
    }
    let mut dh = vec![0.0; h_dim];
    let mut d_gz = vec![0.0; g3];
    let mut d_gi = vec![0.0; g3];
    for t in (0..run.caches.len()).rev() {
        let cache = &run.caches[t];
        if let Some(i) = choice_at[t] {
            let ch = &run.choices[i];
            let mut g: Vec<f64> = ch.probs.iter().map(|q| w * q).collect();
            g[ch.chosen] -= w;
            outer_add(&mut acc.grad, l.out_w, 0, &g, &cache.h);
            axpy(1.0, &g, l.out_b.of_mut(&mut acc.grad));
            matvec_t_add(p, l.out_w, 0, &g, &mut dh);
        }
        let mut dh_prev = vec![0.0; h_dim];
        l.dec.backward(p, &mut acc.grad, cache, &dh, &mut d_gi, &mut dh_prev);
        axpy(1.0, &d_gi, &mut d_gz);
        let prev = run.prevs[t];
        axpy(1.0, &d_gi, &mut acc.tab_dec[prev * g3..(prev + 1) * g3]);
        dh = dh_prev;
    }
    let d_pre: Vec<f64> = dh.iter().zip(&run.h0).map(|(d, h)| d * (1.0 - h * h)).collect();
    outer_add(&mut acc.grad, l.dec_init_w, 0, &d_pre, &run.z);
    axpy(1.0, &d_pre, l.dec_init_b.of_mut(&mut acc.grad));
    matvec_t_add(p, l.dec_init_w, 0, &d_pre, dz);
    outer_add(&mut acc.grad, l.dec.w_ih, e_dim, &d_gz, &run.z);
    axpy(1.0, &d_gz, l.dec.b_ih.of_mut(&mut acc.grad));
    matvec_t_add(p, l.dec.w_ih, e_dim, &d_gz, dz);
}

fn encoder_backward(model: &Model, run: &EncoderRun, dmu: &[f64], dls: &[f64], acc: &mut Acc) {
    let (l, p) = (&model.layout, &model.params);
    let (h_dim, g3) = (model.cfg.hidden, 3 * model.cfg.hidden);
    let zeros = vec![0.0; h_dim];
    let h_last = run.caches.last().map_or(&zeros, |c| &c.h);
    outer_add(&mut acc.grad, l.mu_w, 0, dmu, h_last);
    axpy(1.0, dmu, l.mu_b.of_mut(&mut acc.grad));
    outer_add(&mut acc.grad, l.ls_w, 0, dls, h_last);
    axpy(1.0, dls, l.ls_b.of_mut(&mut acc.grad));
    let mut dh = vec![0.0; h_dim];
    matvec_t_add(p, l.mu_w, 0, dmu, &mut dh);
    matvec_t_add(p, l.ls_w, 0, dls, &mut dh);
    let mut d_gi = vec![0.0; g3];
    for t in (0..run.caches.len()).rev() {
        let mut dh_prev = vec![0.0; h_dim];
        l.enc.backward(p, &mut acc.grad, &run.caches[t], &dh, &mut d_gi, &mut dh_prev);
        let v = run.tokens[t];
        axpy(1.0, &d_gi, &mut acc.tab_enc[v * g3..(v + 1) * g3]);
        dh = dh_prev;
    }
}

/// Policy cross-entropy along one demonstration, with backprop scaled by
/// `w`. Returns the summed cross-entropy.
fn policy_backward(model: &Model, gz: &[f64], demo: &Demo, w: f64, acc: &mut Acc, d_gz: &mut [f64]) -> f64 {
    let (l, p) = (&model.layout, &model.params);
    let (h_dim, d, g3) = (model.cfg.hidden, model.cfg.latent, 3 * model.cfg.hidden);
    let n = demo.actions.len();
    let mut h = vec![0.0; h_dim];
    let mut gi = vec![0.0; g3];
    let mut caches = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    let mut ce = 0.0;
    for t in 0..n {
        let prev = if t == 0 { None } else { Some(demo.actions[t - 1]) };
        policy_gi(model, gz, &demo.perceptions[t], prev, &mut gi);
        let c = l.pol.step(p, &gi, &h);
        h.clone_from(&c.h);
        let lp = nn::log_softmax(&policy_logits(model, &c.h));
        ce -= lp[demo.actions[t].index()];
        probs.push(lp.iter().map(|x| x.exp()).collect::<Vec<_>>());
        caches.push(c);
    }
    let cols = l.pol.w_ih.cols;
    let mut dh = vec![0.0; h_dim];
    let mut d_gi = vec![0.0; g3];
    for t in (0..n).rev() {
        let mut g: Vec<f64> = probs[t].iter().map(|q| w * q).collect();
        g[demo.actions[t].index()] -= w;
        outer_add(&mut acc.grad, l.pol_w, 0, &g, &caches[t].h);
        axpy(1.0, &g, l.pol_b.of_mut(&mut acc.grad));
        matvec_t_add(p, l.pol_w, 0, &g, &mut dh);
        let mut dh_prev = vec![0.0; h_dim];
        l.pol.backward(p, &mut acc.grad, &caches[t], &dh, &mut d_gi, &mut dh_prev);
        axpy(1.0, &d_gi, d_gz);
        let prev = if t == 0 { None } else { Some(demo.actions[t - 1]) };
        for k in obs_columns(&demo.perceptions[t], prev) {
            for (r, gr) in d_gi.iter().enumerate() {
                acc.grad[l.pol.w_ih.off + r * cols + d + k] += gr;
            }
        }
        dh = dh_prev;
    }
    ce
}

fn supervised_sample(model: &Model, tables: &Tables, rec: &DatasetRecord, eps: &[f64], w: LossWeights, scale: f64, acc: &mut Acc) {
    let (l, p) = (&model.layout, &model.params);
    let d = model.cfg.latent;
    let tokens = rec.program.to_tokens();
    let enc = encoder_forward(model, tables, &tokens);
    let sigma: Vec<f64> = enc.log_sigma.iter().map(|s| s.exp()).collect();
    let z: Vec<f64> = (0..d).map(|i| enc.mu[i] + sigma[i] * eps[i]).collect();
    let mut dz = vec![0.0; d];
    let mut dmu = vec![0.0; d];
    let mut dls = vec![0.0; d];
    if w.program != 0.0 {
        let mut target = tokens.clone();
        target.push(Token::End);
        let run = decoder_forward(model, tables, &z, Drive::Teacher(&target));
        let nll = -run.log_prob;
        decoder_backward(model, &run, w.program * scale, acc, &mut dz);
        let kl: f64 = (0..d)
            .map(|i| 0.5 * (enc.mu[i] * enc.mu[i] + sigma[i] * sigma[i] - 1.0 - 2.0 * enc.log_sigma[i]))
            .sum();
        let k = w.program * w.beta * scale;
        for i in 0..d {
            dmu[i] += k * enc.mu[i];
            dls[i] += k * (sigma[i] * sigma[i] - 1.0);
        }
        acc.loss += scale * w.program * (nll + w.beta * kl);
        acc.nll += scale * nll;
        acc.kl += scale * kl;
    }
    if w.latent != 0.0 && !rec.rollouts.is_empty() {
        let gz = policy_gz(model, &z);
        let mut d_gz = vec![0.0; 3 * model.cfg.hidden];
        let per = w.latent * scale / rec.rollouts.len() as f64;
        let ce: f64 = rec
            .rollouts
            .iter()
            .map(|demo| policy_backward(model, &gz, demo, per, acc, &mut d_gz))
            .sum();
        let ce = ce / rec.rollouts.len() as f64;
        acc.loss += scale * w.latent * ce;
        acc.ce += scale * ce;
        outer_add(&mut acc.grad, l.pol.w_ih, 0, &d_gz, &z);
        axpy(1.0, &d_gz, l.pol.b_ih.of_mut(&mut acc.grad));
        matvec_t_add(p, l.pol.w_ih, 0, &d_gz, &mut dz);
    }
    for i in 0..d {
        dmu[i] += dz[i];
        dls[i] += dz[i] * sigma[i] * eps[i];
    }
    encoder_backward(model, &enc, &dmu, &dls, acc);
}

/// Samples per parallel work item. Fixed for a given batch size so the
/// reduction order, and hence the result, does not depend on thread count.
fn chunk_size(batch: usize) -> usize {
    batch.div_ceil(8).max(8)
}

fn run_batch<F>(model: &Model, n: usize, f: F) -> BatchLoss
where
    F: Fn(usize, &Tables, &mut Acc) + Sync,
{
    let tables = model.tables();
    let idx: Vec<usize> = (0..n).collect();
    let parts: Vec<Acc> = idx
        .par_chunks(chunk_size(n))
        .map(|chunk| {
            let mut acc = Acc::new(model);
            for &i in chunk {
                f(i, &tables, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = Acc::new(model);
    for p in parts {
        total.merge(p);
    }
    total.finish(model)
}

/// Weighted sum of the program and latent losses. `eps[i]` is the
/// reparameterization noise for `records[i]`.
pub fn supervised_loss(model: &Model, records: &[&DatasetRecord], eps: &[Vec<f64>], w: LossWeights) -> BatchLoss {
    assert_eq!(records.len(), eps.len());
    let scale = 1.0 / records.len().max(1) as f64;
    run_batch(model, records.len(), |i, tables, acc| {
        supervised_sample(model, tables, records[i], &eps[i], w, scale, acc)
    })
}

pub fn loss_program(model: &Model, records: &[&DatasetRecord], eps: &[Vec<f64>], beta: f64) -> BatchLoss {
    supervised_loss(
        model,
        records,
        eps,
        LossWeights {
            program: 1.0,
            latent: 0.0,
            beta,
        },
    )
}

pub fn loss_latent(model: &Model, records: &[&DatasetRecord], eps: &[Vec<f64>]) -> BatchLoss {
    supervised_loss(
        model,
        records,
        eps,
        LossWeights {
            program: 0.0,
            latent: 1.0,
            beta: 0.0,
        },
    )
}

/// REINFORCE step: decode one sample per program, score it with the
/// prefix-match reward against the stored demonstrations and weight its
/// log-likelihood by `reward - baseline`. Sample `i` draws its tokens from
/// a stream derived from `seed`.
pub fn loss_behavior(
    model: &Model,
    records: &[&DatasetRecord],
    eps: &[Vec<f64>],
    baseline: f64,
    seed: u64,
    limits: ExecLimits,
) -> BatchLoss {
    assert_eq!(records.len(), eps.len());
    let scale = 1.0 / records.len().max(1) as f64;
    let d = model.cfg.latent;
    run_batch(model, records.len(), |i, tables, acc| {
        let rec = records[i];
        let enc = encoder_forward(model, tables, &rec.program.to_tokens());
        let sigma: Vec<f64> = enc.log_sigma.iter().map(|s| s.exp()).collect();
        let z: Vec<f64> = (0..d).map(|k| enc.mu[k] + sigma[k] * eps[i][k]).collect();
        let mut rng = seeded(derive_seed(seed, i as u64));
        let run = decoder_forward(model, tables, &z, Drive::Free(DecodeMode::Sample, &mut rng));
        let body = &run.tokens[..run.tokens.len() - 1];
        let program = parse(body).expect("mask guarantees a parseable program");
        let inits: Vec<_> = rec.rollouts.iter().map(|r| r.initial.clone()).collect();
        let targets: Vec<_> = rec.rollouts.iter().map(|r| r.actions.clone()).collect();
        let reward = r_mat_against(&program, &inits, &targets, limits);
        let adv = reward - baseline;
        let mut dz = vec![0.0; d];
        decoder_backward(model, &run, scale * adv, acc, &mut dz);
        let dls: Vec<f64> = (0..d).map(|k| dz[k] * sigma[k] * eps[i][k]).collect();
        encoder_backward(model, &enc, &dz, &dls, acc);
        acc.loss -= scale * adv * run.log_prob;
        acc.rewards.push(reward);
    })
}
