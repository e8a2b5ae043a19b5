//! Recursive probabilistic program sampler.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;

use super::GenConfig;
use crate::dsl::{Cond, Program, Sensor, Stmt, MAX_REPEAT};
use crate::error::DataError;
use crate::rng::Rng;
use crate::world::Action;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Choice {
    While,
    Repeat,
    Split,
    Action,
    If,
    IfElse,
}

const CHOICES: [Choice; 6] = [
    Choice::While,
    Choice::Repeat,
    Choice::Split,
    Choice::Action,
    Choice::If,
    Choice::IfElse,
];

struct Sampler<'a> {
    cfg: &'a GenConfig,
    rng: &'a mut Rng,
    /// Tokens emitted so far, frame included. Sampling stops early once the
    /// budget is exceeded since the result would be rejected anyway.
    tokens: usize,
}

impl Sampler<'_> {
    fn weights(&self, construct_depth: usize, split_depth: usize) -> [f64; 6] {
        let p = &self.cfg.probs;
        let c = if construct_depth < self.cfg.max_construct_depth { 1.0 } else { 0.0 };
        let s = if split_depth < self.cfg.max_stmt_depth { 1.0 } else { 0.0 };
        [p.while_ * c, p.repeat * c, p.stmt_stmt * s, p.action, p.if_ * c, p.ifelse * c]
    }

    fn cond(&mut self) -> Cond {
        let sensor = Sensor::ALL[self.rng.random_range(0..Sensor::ALL.len())];
        if self.rng.random_bool(0.5) {
            Cond::not(sensor)
        } else {
            Cond::new(sensor)
        }
    }

    /// Fills one statement slot, appending to `out`. Returns false when the
    /// token budget has been blown.
    fn slot(&mut self, construct_depth: usize, split_depth: usize, out: &mut Vec<Stmt>) -> bool {
        if self.tokens > self.cfg.max_program_tokens {
            return false;
        }
        let w = self.weights(construct_depth, split_depth);
        let idx = WeightedIndex::new(w).expect("action weight keeps the total positive");
        let body_split = if self.cfg.reset_split_depth_in_bodies { 0 } else { split_depth };
        match CHOICES[idx.sample(self.rng)] {
            Choice::Action => {
                self.tokens += 1;
                out.push(Stmt::Action(Action::ALL[self.rng.random_range(0..Action::COUNT)]));
            }
            Choice::Split => {
                return self.slot(construct_depth, split_depth + 1, out) && self.slot(construct_depth, split_depth + 1, out);
            }
            Choice::While => {
                let cond = self.cond();
                self.tokens += 5 + cond.token_len();
                let mut body = Vec::new();
                if !self.slot(construct_depth + 1, body_split, &mut body) {
                    return false;
                }
                out.push(Stmt::While { cond, body });
            }
            Choice::If => {
                let cond = self.cond();
                self.tokens += 5 + cond.token_len();
                let mut body = Vec::new();
                if !self.slot(construct_depth + 1, body_split, &mut body) {
                    return false;
                }
                out.push(Stmt::If { cond, body });
            }
            Choice::IfElse => {
                let cond = self.cond();
                self.tokens += 8 + cond.token_len();
                let mut then_body = Vec::new();
                let mut else_body = Vec::new();
                if !self.slot(construct_depth + 1, body_split, &mut then_body)
                    || !self.slot(construct_depth + 1, body_split, &mut else_body)
                {
                    return false;
                }
                out.push(Stmt::IfElse {
                    cond,
                    then_body,
                    else_body,
                });
            }
            Choice::Repeat => {
                let count = self.rng.random_range(0..=MAX_REPEAT);
                self.tokens += 4;
                let mut body = Vec::new();
                if !self.slot(construct_depth + 1, body_split, &mut body) {
                    return false;
                }
                out.push(Stmt::Repeat { count, body });
            }
        }
        true
    }
}

/// Draws one program, resampling until it fits the length budget.
pub fn sample_program(cfg: &GenConfig, rng: &mut Rng) -> Result<Program, DataError> {
    for _ in 0..cfg.max_attempts {
        let mut s = Sampler { cfg, rng, tokens: 4 };
        let mut body = Vec::new();
        if s.slot(0, 0, &mut body) && s.tokens <= cfg.max_program_tokens {
            let p = Program::new(body);
            debug_assert_eq!(p.to_tokens().len(), s.tokens);
            return Ok(p);
        }
    }
    Err(DataError::SamplingExhausted(cfg.max_attempts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::TokenProbs;
    use crate::rng::seeded;

    #[test]
    fn action_only_distribution_yields_single_actions() {
        let cfg = GenConfig {
            probs: TokenProbs {
                while_: 0.0,
                repeat: 0.0,
                stmt_stmt: 0.0,
                action: 1.0,
                if_: 0.0,
                ifelse: 0.0,
            },
            ..GenConfig::default()
        };
        let mut rng = seeded(1);
        for _ in 0..50 {
            let p = sample_program(&cfg, &mut rng).unwrap();
            assert_eq!(p.body.len(), 1);
            assert!(matches!(p.body[0], Stmt::Action(_)));
        }
    }

    #[test]
    fn same_seed_same_program() {
        let cfg = GenConfig::default();
        let a = sample_program(&cfg, &mut seeded(9)).unwrap();
        let b = sample_program(&cfg, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn limits_hold() {
        let cfg = GenConfig::default();
        let mut rng = seeded(3);
        for _ in 0..500 {
            let p = sample_program(&cfg, &mut rng).unwrap();
            assert!(p.token_len() <= 44);
            assert!(p.depth() <= 4);
        }
    }
}
