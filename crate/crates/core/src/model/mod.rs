//! Program embedding model: a recurrent encoder to a Gaussian latent, a
//! grammar-masked recurrent decoder and a latent-conditioned policy.

mod checkpoint;
mod losses;
mod metrics;
mod train;

use rand::distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use losses::{loss_behavior, loss_latent, loss_program, supervised_loss, BatchLoss, LossWeights};
pub use metrics::{eval_metrics, policy_accuracy, reconstruction, smoothness, Metrics};
pub use train::{train, LogRow, TrainConfig, TrainOutcome};

use crate::dsl::{mask_init, parse, Program, Token, VOCAB_SIZE};
use crate::error::ModelError;
use crate::nn::{self, matvec_add, Block, Gru, GruCache, LayoutBuilder};
use crate::rng::{seeded, Rng};
use crate::world::{Action, Perception};

/// Policy observation: perception bits plus a one-hot previous action with
/// an extra slot for "no action yet".
pub const OBS_DIM: usize = Perception::COUNT + Action::COUNT + 1;
/// Upper bound on decoder steps: the longest legal program plus the end token.
pub const MAX_DECODE_STEPS: usize = crate::dsl::MAX_PROGRAM_TOKENS + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub latent: usize,
}

impl ModelConfig {
    pub fn desk() -> ModelConfig {
        ModelConfig {
            vocab: VOCAB_SIZE,
            embed: 64,
            hidden: 64,
            latent: 64,
        }
    }

    pub fn full() -> ModelConfig {
        ModelConfig {
            vocab: VOCAB_SIZE,
            embed: 256,
            hidden: 256,
            latent: 256,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab != VOCAB_SIZE {
            return Err(ModelError::Config(format!(
                "vocabulary size {} does not match the DSL ({VOCAB_SIZE})",
                self.vocab
            )));
        }
        if self.embed == 0 || self.hidden == 0 || self.latent == 0 {
            return Err(ModelError::Config("dimensions must be positive".into()));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub enc_emb: Block,
    pub enc: Gru,
    pub mu_w: Block,
    pub mu_b: Block,
    pub ls_w: Block,
    pub ls_b: Block,
    pub dec_init_w: Block,
    pub dec_init_b: Block,
    pub dec_emb: Block,
    /// Input columns: token embedding, then latent.
    pub dec: Gru,
    pub out_w: Block,
    pub out_b: Block,
    /// Input columns: latent, then observation.
    pub pol: Gru,
    pub pol_w: Block,
    pub pol_b: Block,
    pub total: usize,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Layout {
        let (v, e, h, d) = (c.vocab, c.embed, c.hidden, c.latent);
        let mut lb = LayoutBuilder::default();
        let enc_emb = lb.block(v, e);
        let enc = Gru::new(&mut lb, e, h);
        let mu_w = lb.block(d, h);
        let mu_b = lb.block(d, 1);
        let ls_w = lb.block(d, h);
        let ls_b = lb.block(d, 1);
        let dec_init_w = lb.block(h, d);
        let dec_init_b = lb.block(h, 1);
        let dec_emb = lb.block(v, e);
        let dec = Gru::new(&mut lb, e + d, h);
        let out_w = lb.block(v, h);
        let out_b = lb.block(v, 1);
        let pol = Gru::new(&mut lb, d + OBS_DIM, h);
        let pol_w = lb.block(Action::COUNT, h);
        let pol_b = lb.block(Action::COUNT, 1);
        Layout {
            enc_emb,
            enc,
            mu_w,
            mu_b,
            ls_w,
            ls_b,
            dec_init_w,
            dec_init_b,
            dec_emb,
            dec,
            out_w,
            out_b,
            pol,
            pol_w,
            pol_b,
            total: lb.total(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Per-token input projections, recomputed whenever the parameters change.
#[derive(Clone, Debug)]
pub struct Tables {
    /// `W_ih · emb(v) + b_ih` for the encoder, `vocab × 3H`.
    pub enc: Vec<f64>,
    /// Embedding part of the decoder input projection, `vocab × 3H`.
    pub dec: Vec<f64>,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Model, ModelError> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let mut params = vec![0.0; layout.total];
        let mut rng = seeded(seed);
        let l = &layout;
        nn::normal(l.enc_emb.of_mut(&mut params), 1.0, &mut rng);
        nn::normal(l.dec_emb.of_mut(&mut params), 1.0, &mut rng);
        for g in [&l.enc, &l.dec, &l.pol] {
            g.init(&mut params, &mut rng);
        }
        let lin = |w: Block, b: Block, params: &mut [f64], rng: &mut Rng| {
            let k = 1.0 / (w.cols as f64).sqrt();
            nn::uniform(w.of_mut(params), k, rng);
            nn::uniform(b.of_mut(params), k, rng);
        };
        lin(l.mu_w, l.mu_b, &mut params, &mut rng);
        lin(l.ls_w, l.ls_b, &mut params, &mut rng);
        lin(l.dec_init_w, l.dec_init_b, &mut params, &mut rng);
        lin(l.out_w, l.out_b, &mut params, &mut rng);
        lin(l.pol_w, l.pol_b, &mut params, &mut rng);
        Ok(Model { cfg, layout, params })
    }

    pub fn from_params(cfg: ModelConfig, params: Vec<f64>) -> Result<Model, ModelError> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if params.len() != layout.total {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Model { cfg, layout, params })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.latent
    }

    pub fn tables(&self) -> Tables {
        let (l, p) = (&self.layout, &self.params);
        let g3 = 3 * self.cfg.hidden;
        let mut enc = vec![0.0; self.cfg.vocab * g3];
        let mut dec = vec![0.0; self.cfg.vocab * g3];
        for v in 0..self.cfg.vocab {
            let row = &mut enc[v * g3..(v + 1) * g3];
            row.copy_from_slice(l.enc.b_ih.of(p));
            matvec_add(p, l.enc.w_ih, 0, l.enc_emb.row(p, v), row);
            matvec_add(p, l.dec.w_ih, 0, l.dec_emb.row(p, v), &mut dec[v * g3..(v + 1) * g3]);
        }
        Tables { enc, dec }
    }

    pub fn encoder(&self) -> Encoder<'_> {
        Encoder {
            model: self,
            tables: self.tables(),
        }
    }

    pub fn decoder(&self) -> Decoder<'_> {
        Decoder {
            model: self,
            tables: self.tables(),
        }
    }

    /// Mean and log standard deviation of the posterior for a program.
    pub fn encode(&self, program: &Program) -> (Vec<f64>, Vec<f64>) {
        self.encoder().encode(&program.to_tokens())
    }

    pub fn decode(&self, z: &[f64], mode: DecodeMode, rng: &mut Rng) -> Program {
        self.decoder().decode(z, mode, rng)
    }

    pub fn check_finite(&self) -> bool {
        self.params.iter().all(|x| x.is_finite())
    }
}

pub(crate) struct EncoderRun {
    pub tokens: Vec<usize>,
    pub caches: Vec<GruCache>,
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

pub struct Encoder<'a> {
    pub model: &'a Model,
    pub tables: Tables,
}

impl Encoder<'_> {
    pub fn encode(&self, tokens: &[Token]) -> (Vec<f64>, Vec<f64>) {
        let r = encoder_forward(self.model, &self.tables, tokens);
        (r.mu, r.log_sigma)
    }

    /// Reparameterized draw `z = mu + exp(log_sigma) * eps`.
    pub fn encode_sample(&self, tokens: &[Token], eps: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (mu, ls) = self.encode(tokens);
        let z = reparameterize(&mu, &ls, eps);
        (mu, ls, z)
    }
}

pub fn reparameterize(mu: &[f64], log_sigma: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(log_sigma)
        .zip(eps)
        .map(|((m, s), e)| m + s.exp() * e)
        .collect()
}

pub fn standard_normal(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut v = vec![0.0; n];
    nn::normal(&mut v, 1.0, rng);
    v
}

pub(crate) fn encoder_forward(model: &Model, tables: &Tables, tokens: &[Token]) -> EncoderRun {
    let (l, p) = (&model.layout, &model.params);
    let (h_dim, g3) = (model.cfg.hidden, 3 * model.cfg.hidden);
    let ids: Vec<usize> = tokens.iter().map(|t| t.index()).collect();
    let mut h = vec![0.0; h_dim];
    let mut caches = Vec::with_capacity(ids.len());
    for &v in &ids {
        let c = l.enc.step(p, &tables.enc[v * g3..(v + 1) * g3], &h);
        h.clone_from(&c.h);
        caches.push(c);
    }
    let mut mu = l.mu_b.of(p).to_vec();
    matvec_add(p, l.mu_w, 0, &h, &mut mu);
    let mut log_sigma = l.ls_b.of(p).to_vec();
    matvec_add(p, l.ls_w, 0, &h, &mut log_sigma);
    EncoderRun {
        tokens: ids,
        caches,
        mu,
        log_sigma,
    }
}

/// One decoder step that had a real choice (more than one legal token).
pub(crate) struct ChoiceStep {
    pub t: usize,
    pub probs: Vec<f64>,
    pub chosen: usize,
}

pub(crate) struct DecoderRun {
    pub z: Vec<f64>,
    pub h0: Vec<f64>,
    /// Previous-token index fed at each step.
    pub prevs: Vec<usize>,
    pub caches: Vec<GruCache>,
    pub choices: Vec<ChoiceStep>,
    /// Emitted tokens, end token included.
    pub tokens: Vec<Token>,
    /// Sum of log-probabilities of the emitted tokens.
    pub log_prob: f64,
}

pub(crate) enum Drive<'a> {
    Teacher(&'a [Token]),
    Free(DecodeMode, &'a mut Rng),
}

/// Runs the decoder from `z`, either teacher-forced on `target` (which must
/// end with the end token) or free-running. Keeps what backprop needs.
pub(crate) fn decoder_forward(model: &Model, tables: &Tables, z: &[f64], mut drive: Drive<'_>) -> DecoderRun {
    let (l, p) = (&model.layout, &model.params);
    let (e_dim, g3) = (model.cfg.embed, 3 * model.cfg.hidden);
    let mut h0 = l.dec_init_b.of(p).to_vec();
    matvec_add(p, l.dec_init_w, 0, z, &mut h0);
    h0.iter_mut().for_each(|x| *x = x.tanh());
    let mut gz = l.dec.b_ih.of(p).to_vec();
    matvec_add(p, l.dec.w_ih, e_dim, z, &mut gz);

    let mut ms = mask_init();
    let mut prev = Token::Start.index();
    let mut h = h0.clone();
    let mut run = DecoderRun {
        z: z.to_vec(),
        h0,
        prevs: Vec::new(),
        caches: Vec::new(),
        choices: Vec::new(),
        tokens: Vec::new(),
        log_prob: 0.0,
    };
    let mut gi = vec![0.0; g3];
    for t in 0..MAX_DECODE_STEPS {
        for (k, g) in gi.iter_mut().enumerate() {
            *g = tables.dec[prev * g3 + k] + gz[k];
        }
        let c = l.dec.step(p, &gi, &h);
        h.clone_from(&c.h);
        run.prevs.push(prev);
        run.caches.push(c);
        let legal = ms.legal();
        let tok = if legal.len() == 1 {
            let only = legal.tokens().next().expect("one legal token");
            if let Drive::Teacher(target) = &drive {
                debug_assert_eq!(target[t], only);
            }
            only
        } else {
            let mut logits = l.out_b.of(p).to_vec();
            matvec_add(p, l.out_w, 0, &h, &mut logits);
            let lp = nn::masked_log_softmax(&logits, &legal.additive_mask());
            let chosen = match &mut drive {
                Drive::Teacher(target) => target[t].index(),
                Drive::Free(DecodeMode::Greedy, _) => nn::argmax(&lp),
                Drive::Free(DecodeMode::Sample, rng) => {
                    let w: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
                    WeightedIndex::new(&w).expect("some legal token").sample(*rng)
                }
            };
            run.log_prob += lp[chosen];
            run.choices.push(ChoiceStep {
                t,
                probs: lp.iter().map(|x| x.exp()).collect(),
                chosen,
            });
            Token::from_index(chosen).expect("index in vocabulary")
        };
        ms.advance(tok).expect("decoded token is legal under the mask");
        run.tokens.push(tok);
        prev = tok.index();
        if ms.is_finished() {
            break;
        }
    }
    run
}

pub struct Decoder<'a> {
    pub model: &'a Model,
    pub tables: Tables,
}

impl Decoder<'_> {
    /// Token sequence (end token stripped). Always a syntactically valid
    /// program.
    pub fn decode_tokens(&self, z: &[f64], mode: DecodeMode, rng: &mut Rng) -> Vec<Token> {
        let mut toks = self.decode_fast(z, mode, rng);
        toks.pop();
        toks
    }

    pub fn decode(&self, z: &[f64], mode: DecodeMode, rng: &mut Rng) -> Program {
        parse(&self.decode_tokens(z, mode, rng)).expect("mask guarantees a parseable program")
    }

    pub fn greedy(&self, z: &[f64]) -> Program {
        // Greedy decoding never touches the RNG.
        let mut rng = seeded(0);
        self.decode(z, DecodeMode::Greedy, &mut rng)
    }

    /// Inference-only loop: no caches, output layer skipped on forced steps.
    fn decode_fast(&self, z: &[f64], mode: DecodeMode, rng: &mut Rng) -> Vec<Token> {
        let m = self.model;
        let (l, p) = (&m.layout, &m.params);
        let (e_dim, g3) = (m.cfg.embed, 3 * m.cfg.hidden);
        let mut h = l.dec_init_b.of(p).to_vec();
        matvec_add(p, l.dec_init_w, 0, z, &mut h);
        h.iter_mut().for_each(|x| *x = x.tanh());
        let mut gz = l.dec.b_ih.of(p).to_vec();
        matvec_add(p, l.dec.w_ih, e_dim, z, &mut gz);
        let mut ms = mask_init();
        let mut prev = Token::Start.index();
        let mut out = Vec::new();
        let mut gi = vec![0.0; g3];
        let mut scratch = Vec::with_capacity(g3);
        let mut logits = vec![0.0; m.cfg.vocab];
        for _ in 0..MAX_DECODE_STEPS {
            for (k, g) in gi.iter_mut().enumerate() {
                *g = self.tables.dec[prev * g3 + k] + gz[k];
            }
            l.dec.step_fast(p, &gi, &mut h, &mut scratch);
            let legal = ms.legal();
            let tok = if legal.len() == 1 {
                legal.tokens().next().expect("one legal token")
            } else {
                logits.copy_from_slice(l.out_b.of(p));
                matvec_add(p, l.out_w, 0, &h, &mut logits);
                let mask = legal.additive_mask();
                let i = match mode {
                    DecodeMode::Greedy => {
                        let masked: Vec<f64> = logits.iter().zip(&mask).map(|(a, b)| a + b).collect();
                        nn::argmax(&masked)
                    }
                    DecodeMode::Sample => {
                        let lp = nn::masked_log_softmax(&logits, &mask);
                        let w: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
                        WeightedIndex::new(&w).expect("some legal token").sample(rng)
                    }
                };
                Token::from_index(i).expect("index in vocabulary")
            };
            ms.advance(tok).expect("decoded token is legal under the mask");
            out.push(tok);
            prev = tok.index();
            if ms.is_finished() {
                break;
            }
        }
        out
    }
}

pub(crate) fn obs_columns(perception: &Perception, prev: Option<Action>) -> impl Iterator<Item = usize> {
    let bits = perception.as_array();
    let prev_col = Perception::COUNT + prev.map_or(Action::COUNT, |a| a.index());
    (0..Perception::COUNT).filter(move |&k| bits[k]).chain(std::iter::once(prev_col))
}

/// Latent part of the policy input projection plus its bias.
pub(crate) fn policy_gz(model: &Model, z: &[f64]) -> Vec<f64> {
    let (l, p) = (&model.layout, &model.params);
    let mut gz = l.pol.b_ih.of(p).to_vec();
    matvec_add(p, l.pol.w_ih, 0, z, &mut gz);
    gz
}

pub(crate) fn policy_gi(model: &Model, gz: &[f64], perception: &Perception, prev: Option<Action>, gi: &mut [f64]) {
    let (l, p) = (&model.layout, &model.params);
    let d = model.cfg.latent;
    gi.copy_from_slice(gz);
    let cols = l.pol.w_ih.cols;
    for k in obs_columns(perception, prev) {
        for (r, g) in gi.iter_mut().enumerate() {
            *g += p[l.pol.w_ih.off + r * cols + d + k];
        }
    }
}

pub(crate) fn policy_logits(model: &Model, h: &[f64]) -> Vec<f64> {
    let (l, p) = (&model.layout, &model.params);
    let mut logits = l.pol_b.of(p).to_vec();
    matvec_add(p, l.pol_w, 0, h, &mut logits);
    logits
}

/// Teacher-forced policy predictions (argmax actions) along a demonstration.
pub fn policy_predictions(model: &Model, z: &[f64], perceptions: &[Perception], actions: &[Action]) -> Vec<Action> {
    let gz = policy_gz(model, z);
    let g3 = 3 * model.cfg.hidden;
    let mut h = vec![0.0; model.cfg.hidden];
    let mut gi = vec![0.0; g3];
    let mut scratch = Vec::with_capacity(g3);
    let mut prev = None;
    let mut out = Vec::with_capacity(actions.len());
    for (per, &a) in perceptions.iter().zip(actions) {
        policy_gi(model, &gz, per, prev, &mut gi);
        model.layout.pol.step_fast(&model.params, &gi, &mut h, &mut scratch);
        let logits = policy_logits(model, &h);
        out.push(Action::from_index(nn::argmax(&logits)).expect("five action logits"));
        prev = Some(a);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_text;

    fn tiny() -> Model {
        Model::new(
            ModelConfig {
                vocab: VOCAB_SIZE,
                embed: 6,
                hidden: 5,
                latent: 4,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_gives_the_mean() {
        let m = tiny();
        let p = parse_text("DEF run m( move m)").unwrap();
        let (mu, ls, z) = m.encoder().encode_sample(&p.to_tokens(), &[0.0; 4]);
        assert_eq!(mu, z);
        assert_eq!(ls.len(), 4);
    }

    #[test]
    fn encoding_is_a_function_of_the_program() {
        let m = tiny();
        let a = parse_text("DEF run m( WHILE c( frontIsClear c) w( move w) m)").unwrap();
        let b = parse_text("DEF   run m(  WHILE c( frontIsClear c) w( move w) m)").unwrap();
        assert_eq!(m.encode(&a), m.encode(&b));
    }

    #[test]
    fn random_decodes_parse_and_greedy_is_deterministic() {
        let m = tiny();
        let dec = m.decoder();
        let mut rng = seeded(2);
        for _ in 0..200 {
            let z = standard_normal(4, &mut rng);
            let p = dec.decode(&z, DecodeMode::Sample, &mut rng);
            assert!(p.token_len() <= 45);
            assert_eq!(dec.greedy(&z), dec.greedy(&z));
        }
    }

    #[test]
    fn fast_and_cached_decoders_agree() {
        let m = tiny();
        let t = m.tables();
        let dec = m.decoder();
        let mut rng = seeded(3);
        for _ in 0..50 {
            let z = standard_normal(4, &mut rng);
            let mut r1 = seeded(9);
            let mut r2 = seeded(9);
            let slow = decoder_forward(&m, &t, &z, Drive::Free(DecodeMode::Sample, &mut r1)).tokens;
            let fast = dec.decode_fast(&z, DecodeMode::Sample, &mut r2);
            assert_eq!(slow, fast);
        }
    }
}
