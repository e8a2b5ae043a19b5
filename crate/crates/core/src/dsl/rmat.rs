//! Behavior-matching reward between two programs.

use super::ast::Program;
use super::interp::{execute_actions, ExecLimits};
use crate::world::{Action, GridState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("r_mat needs at least one initial state")]
pub struct NoInitialStates;

/// Prefix-match score of two action traces: the fraction of the longer
/// trace covered by the common prefix. Two empty traces match perfectly.
pub fn r_mat_traces(a: &[Action], b: &[Action]) -> f64 {
    let n = a.len().max(b.len());
    if n == 0 {
        return 1.0;
    }
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    prefix as f64 / n as f64
}

/// Mean prefix-match score of the traces of `candidate` and `target` over
/// `init_states`.
pub fn r_mat(candidate: &Program, target: &Program, init_states: &[GridState]) -> Result<f64, NoInitialStates> {
    r_mat_with_limits(candidate, target, init_states, ExecLimits::default())
}

pub fn r_mat_with_limits(
    candidate: &Program,
    target: &Program,
    init_states: &[GridState],
    limits: ExecLimits,
) -> Result<f64, NoInitialStates> {
    if init_states.is_empty() {
        return Err(NoInitialStates);
    }
    let total: f64 = init_states
        .iter()
        .map(|s| {
            r_mat_traces(
                &execute_actions(candidate, s, limits),
                &execute_actions(target, s, limits),
            )
        })
        .sum();
    Ok(total / init_states.len() as f64)
}

/// Same score against precomputed target traces (one per state).
pub fn r_mat_against(candidate: &Program, init_states: &[GridState], target_traces: &[Vec<Action>], limits: ExecLimits) -> f64 {
    debug_assert_eq!(init_states.len(), target_traces.len());
    if init_states.is_empty() {
        return 0.0;
    }
    let total: f64 = init_states
        .iter()
        .zip(target_traces)
        .map(|(s, t)| r_mat_traces(&execute_actions(candidate, s, limits), t))
        .sum();
    total / init_states.len() as f64
}
