//! Deterministic Karel gridworld and the task suite built on it.

pub mod grid;
pub mod layout;
pub mod tasks;

pub use grid::{apply_action, perceive, Action, ActionFlags, Direction, GridState, Perception, MARKER_CAP};
pub use tasks::{
    config_seed, mean_return_on, mean_task_return, sample_task, task_reward, RewardRange, TaskGoal, TaskInstance,
    TaskKind, TaskSpec, DEFAULT_HORIZON,
};
