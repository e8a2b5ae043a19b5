//! Random program dataset: sampler, branch-covering rollout collection and
//! on-disk storage.

mod rollouts;
mod sampler;
mod store;

use serde::{Deserialize, Serialize};

pub use rollouts::{collect_rollouts, random_world, Demo};
pub use sampler::sample_program;
pub use store::{
    build_dataset, program_id, read_programs, read_rollouts, write_programs, write_rollouts, Dataset, DatasetRecord,
    Manifest, Split, ROLLOUT_FORMAT_VERSION,
};

use crate::error::DataError;

/// Probability of each production for a statement slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenProbs {
    #[serde(rename = "WHILE")]
    pub while_: f64,
    #[serde(rename = "REPEAT")]
    pub repeat: f64,
    #[serde(rename = "STMT_STMT")]
    pub stmt_stmt: f64,
    #[serde(rename = "ACTION")]
    pub action: f64,
    #[serde(rename = "IF")]
    pub if_: f64,
    #[serde(rename = "IFELSE")]
    pub ifelse: f64,
}

impl Default for TokenProbs {
    fn default() -> Self {
        TokenProbs {
            while_: 0.15,
            repeat: 0.03,
            stmt_stmt: 0.5,
            action: 0.2,
            if_: 0.08,
            ifelse: 0.04,
        }
    }
}

impl TokenProbs {
    pub fn sum(&self) -> f64 {
        self.while_ + self.repeat + self.stmt_stmt + self.action + self.if_ + self.ifelse
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub probs: TokenProbs,
    pub max_construct_depth: usize,
    /// Nested `STMT_STMT` splits allowed within one statement list.
    pub max_stmt_depth: usize,
    pub max_program_tokens: usize,
    /// Whether a construct body starts a fresh split budget.
    pub reset_split_depth_in_bodies: bool,
    pub max_attempts: usize,
    pub rollouts_per_program: usize,
    pub exec_cap: usize,
    /// Batches of candidate start states tried before a program is rejected.
    pub coverage_rounds: usize,
    pub world_height: usize,
    pub world_width: usize,
    pub wall_density: f64,
    pub marker_density: f64,
    pub splits: SplitSizes,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            probs: TokenProbs::default(),
            max_construct_depth: 4,
            max_stmt_depth: 6,
            max_program_tokens: 44,
            reset_split_depth_in_bodies: true,
            max_attempts: 1000,
            rollouts_per_program: 10,
            exec_cap: 100,
            coverage_rounds: 50,
            world_height: 8,
            world_width: 8,
            wall_density: 0.1,
            marker_density: 0.2,
            splits: SplitSizes {
                train: 5000,
                val: 750,
                test: 750,
            },
        }
    }
}

impl GenConfig {
    /// Full-size splits: 35k train, 7.5k validation and test.
    pub fn full() -> GenConfig {
        GenConfig {
            splits: SplitSizes {
                train: 35_000,
                val: 7_500,
                test: 7_500,
            },
            ..GenConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let p = &self.probs;
        let all = [p.while_, p.repeat, p.stmt_stmt, p.action, p.if_, p.ifelse];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(DataError::Config("token probabilities must be non-negative".into()));
        }
        if (p.sum() - 1.0).abs() > 1e-9 {
            return Err(DataError::Config(format!("token probabilities sum to {}", p.sum())));
        }
        if p.action <= 0.0 {
            return Err(DataError::Config("ACTION probability must be positive".into()));
        }
        if self.max_program_tokens < 5 {
            return Err(DataError::Config("max_program_tokens must allow DEF run m( action m)".into()));
        }
        if self.rollouts_per_program == 0 || self.max_attempts == 0 {
            return Err(DataError::Config("rollouts_per_program and max_attempts must be positive".into()));
        }
        if self.world_height < 3 || self.world_width < 3 {
            return Err(DataError::Config("rollout worlds must be at least 3x3".into()));
        }
        for d in [self.wall_density, self.marker_density] {
            if !(0.0..1.0).contains(&d) {
                return Err(DataError::Config("densities must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_probabilities_sum_to_one() {
        assert!((TokenProbs::default().sum() - 1.0).abs() < 1e-12);
        GenConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_probabilities_rejected() {
        let mut cfg = GenConfig::default();
        cfg.probs.action = 0.5;
        assert!(cfg.validate().is_err());
    }
}
