//! The six Karel tasks: initial-configuration samplers and reward functions.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use super::grid::{Action, Direction, GridState};
use super::layout::{self, Layout};
use crate::dsl::{execute, ExecLimits, Program, Rollout};
use crate::error::WorldError;
use crate::rng::{derive_seed, seeded, Rng};

/// Horizon used at the default task sizes.
pub const DEFAULT_HORIZON: usize = 100;
/// Number of garbage markers in CleanHouse.
pub const CLEANHOUSE_GARBAGE: usize = 10;
/// Default per-cell marker probability for TopOff's bottom row.
pub const TOPOFF_MARKER_PROB: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    StairClimber,
    FourCorner,
    TopOff,
    Maze,
    CleanHouse,
    Harvester,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::StairClimber,
        TaskKind::FourCorner,
        TaskKind::TopOff,
        TaskKind::Maze,
        TaskKind::CleanHouse,
        TaskKind::Harvester,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::StairClimber => "StairClimber",
            TaskKind::FourCorner => "FourCorner",
            TaskKind::TopOff => "TopOff",
            TaskKind::Maze => "Maze",
            TaskKind::CleanHouse => "CleanHouse",
            TaskKind::Harvester => "Harvester",
        }
    }

    /// Grid size (height, width) including the enclosing wall ring.
    pub fn default_dims(self) -> (usize, usize) {
        match self {
            TaskKind::StairClimber | TaskKind::FourCorner | TaskKind::TopOff => (12, 12),
            TaskKind::Maze | TaskKind::Harvester => (8, 8),
            TaskKind::CleanHouse => (14, 22),
        }
    }

    pub fn reward_range(self) -> RewardRange {
        match self {
            TaskKind::StairClimber => RewardRange::Signed,
            _ => RewardRange::Unit,
        }
    }

    /// Tasks where a marker put down in the wrong place zeroes the reward.
    pub fn places_markers(self) -> bool {
        matches!(self, TaskKind::FourCorner | TaskKind::TopOff)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == lower)
            .ok_or_else(|| WorldError::UnknownTask(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardRange {
    /// Rewards in [0, 1].
    Unit,
    /// Rewards in [-1, 1].
    Signed,
}

impl RewardRange {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            RewardRange::Unit => (0.0, 1.0),
            RewardRange::Signed => (-1.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub height: usize,
    pub width: usize,
    pub reward_range: RewardRange,
    pub horizon: usize,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> TaskSpec {
        let (height, width) = kind.default_dims();
        TaskSpec {
            kind,
            height,
            width,
            reward_range: kind.reward_range(),
            horizon: DEFAULT_HORIZON,
        }
    }

    /// A resized task. The horizon grows with the interior area so that
    /// policies solving the default size have room to act.
    pub fn with_size(kind: TaskKind, height: usize, width: usize) -> Result<TaskSpec, WorldError> {
        let min = match kind {
            TaskKind::StairClimber | TaskKind::Maze => 5,
            TaskKind::TopOff => 4,
            _ => 3,
        };
        if height < min || width < min {
            return Err(WorldError::InvalidDims { height, width });
        }
        let (dh, dw) = kind.default_dims();
        let default_area = ((dh - 2) * (dw - 2)) as f64;
        let area = ((height - 2) * (width - 2)) as f64;
        let horizon = ((DEFAULT_HORIZON as f64 * area / default_area).ceil() as usize)
            .max(DEFAULT_HORIZON);
        Ok(TaskSpec {
            kind,
            height,
            width,
            reward_range: kind.reward_range(),
            horizon,
        })
    }

    pub fn is_default_size(&self) -> bool {
        (self.height, self.width) == self.kind.default_dims()
    }

    pub fn exec_limits(&self) -> ExecLimits {
        ExecLimits::for_horizon(self.horizon)
    }

    pub fn sample(&self, seed: u64) -> Result<TaskInstance, WorldError> {
        let mut rng = seeded(seed);
        let (initial, goal) = match self.kind {
            TaskKind::StairClimber => stair_climber(self, &mut rng)?,
            TaskKind::FourCorner => four_corner(self, &mut rng)?,
            TaskKind::TopOff => {
                let n = topoff_candidates(self).len();
                let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(TOPOFF_MARKER_PROB)).collect();
                topoff_from_mask(self, &mask)?
            }
            TaskKind::Maze => maze(self, &mut rng)?,
            TaskKind::CleanHouse => clean_house(self, &mut rng)?,
            TaskKind::Harvester => {
                let n = (self.height - 2) * (self.width - 2);
                harvester_from_mask(self, &vec![true; n])?
            }
        };
        Ok(TaskInstance {
            spec: self.clone(),
            initial,
            goal,
            seed,
        })
    }

    /// Number of marker-placement bits that define a configuration of the
    /// task (TopOff: bottom-row candidates; Harvester: interior cells).
    pub fn config_bits(&self) -> Option<usize> {
        match self.kind {
            TaskKind::TopOff => Some(topoff_candidates(self).len()),
            TaskKind::Harvester => Some((self.height - 2) * (self.width - 2)),
            _ => None,
        }
    }

    /// Builds the instance with an explicit marker-placement configuration.
    pub fn instance_from_mask(&self, mask: &[bool], seed: u64) -> Result<TaskInstance, WorldError> {
        let bad = || WorldError::BadConfig {
            task: self.kind.name(),
            config: mask.len() as u64,
        };
        if self.config_bits() != Some(mask.len()) {
            return Err(bad());
        }
        let (initial, goal) = match self.kind {
            TaskKind::TopOff => topoff_from_mask(self, mask)?,
            TaskKind::Harvester => harvester_from_mask(self, mask)?,
            _ => return Err(bad()),
        };
        Ok(TaskInstance {
            spec: self.clone(),
            initial,
            goal,
            seed,
        })
    }
}

/// Task-specific bookkeeping needed to score a rollout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskGoal {
    StairClimber {
        stairs: Vec<(usize, usize)>,
        goal: (usize, usize),
    },
    FourCorner {
        corners: [(usize, usize); 4],
    },
    TopOff {
        /// Bottom-row cells that start with a marker, left to right.
        marked: Vec<(usize, usize)>,
        last_cell: (usize, usize),
    },
    Maze {
        goal: (usize, usize),
    },
    CleanHouse {
        garbage: Vec<(usize, usize)>,
        dustbin: (usize, usize),
    },
    Harvester {
        total: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub spec: TaskSpec,
    pub initial: GridState,
    pub goal: TaskGoal,
    pub seed: u64,
}

/// Samples an instance of a task at its default size.
pub fn sample_task(kind: TaskKind, seed: u64) -> Result<TaskInstance, WorldError> {
    TaskSpec::new(kind).sample(seed)
}

impl TaskInstance {
    /// Scores an action sequence executed from this instance's initial state.
    pub fn reward_for_actions(&self, actions: &[Action]) -> f64 {
        let mut state = self.initial.clone();
        match &self.goal {
            TaskGoal::StairClimber { stairs, goal } => {
                let stairs: HashSet<_> = stairs.iter().copied().collect();
                for &a in actions {
                    state.step(a);
                    let pos = state.agent_pos();
                    if pos == *goal {
                        return 1.0;
                    }
                    if !stairs.contains(&pos) {
                        return -1.0;
                    }
                }
                0.0
            }
            TaskGoal::FourCorner { corners } => {
                if !replay_placements(&mut state, actions, |p| corners.contains(&p)) {
                    return 0.0;
                }
                let filled = corners
                    .iter()
                    .filter(|&&(r, c)| state.markers_at(r, c) > 0)
                    .count();
                filled as f64 / 4.0
            }
            TaskGoal::TopOff { marked, last_cell } => {
                let targets: HashSet<_> = marked.iter().copied().collect();
                if !replay_placements(&mut state, actions, |p| targets.contains(&p)) {
                    return 0.0;
                }
                let topped = marked
                    .iter()
                    .take_while(|&&(r, c)| state.markers_at(r, c) == self.initial.markers_at(r, c) + 1)
                    .count();
                let bonus = usize::from(state.agent_pos() == *last_cell);
                (topped + bonus) as f64 / (marked.len() + 1) as f64
            }
            TaskGoal::Maze { goal } => {
                for &a in actions {
                    state.step(a);
                    if state.agent_pos() == *goal {
                        return 1.0;
                    }
                }
                0.0
            }
            TaskGoal::CleanHouse { garbage, .. } => {
                for &a in actions {
                    state.step(a);
                }
                let cleaned = garbage
                    .iter()
                    .filter(|&&(r, c)| state.markers_at(r, c) == 0)
                    .count();
                cleaned as f64 / garbage.len() as f64
            }
            TaskGoal::Harvester { total } => {
                for &a in actions {
                    state.step(a);
                }
                if *total == 0 {
                    return 0.0;
                }
                let picked = total.saturating_sub(state.total_markers());
                picked as f64 / *total as f64
            }
        }
    }

    pub fn reward(&self, rollout: &Rollout) -> Result<f64, WorldError> {
        if rollout.initial != self.initial {
            return Err(WorldError::TraceMismatch);
        }
        Ok(self.reward_for_actions(&rollout.actions))
    }

    pub fn run(&self, program: &Program) -> Rollout {
        execute(program, &self.initial, self.spec.exec_limits())
    }
}

/// Scores `trace` on `instance`. Errors when the trace was not produced from
/// the instance's initial state.
pub fn task_reward(instance: &TaskInstance, trace: &Rollout) -> Result<f64, WorldError> {
    instance.reward(trace)
}

/// Seed of the `i`-th evaluation configuration derived from `base_seed`.
pub fn config_seed(base_seed: u64, i: usize) -> u64 {
    derive_seed(base_seed, i as u64)
}

/// Mean reward of `program` over `n_configs` instances whose seeds derive
/// from `base_seed`.
pub fn mean_task_return(spec: &TaskSpec, program: &Program, n_configs: usize, base_seed: u64) -> Result<f64, WorldError> {
    let instances = (0..n_configs.max(1))
        .map(|i| spec.sample(config_seed(base_seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean_return_on(&instances, program))
}

/// Mean reward of `program` over a fixed set of instances.
pub fn mean_return_on(instances: &[TaskInstance], program: &Program) -> f64 {
    if instances.is_empty() {
        return 0.0;
    }
    let total: f64 = instances
        .iter()
        .map(|inst| inst.reward_for_actions(&inst.run(program).actions))
        .sum();
    total / instances.len() as f64
}

/// Replays actions, returning false as soon as a marker is put on a cell
/// for which `allowed` is false.
fn replay_placements(state: &mut GridState, actions: &[Action], allowed: impl Fn((usize, usize)) -> bool) -> bool {
    for &a in actions {
        let pos = state.agent_pos();
        let flags = state.step(a);
        if a == Action::PutMarker && !flags.overflow && !allowed(pos) {
            return false;
        }
    }
    true
}

type Built = (GridState, TaskGoal);

/// Step cells of the staircase from bottom-left upward, paired with the
/// riser cell above each step.
fn stair_layout(spec: &TaskSpec) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let bottom = spec.height - 2;
    let mut steps = Vec::new();
    let mut risers = Vec::new();
    for c in 1..spec.width - 1 {
        let Some(row) = bottom.checked_sub(c - 1) else { break };
        if row < 1 {
            break;
        }
        steps.push((row, c));
        if row > 1 {
            risers.push((row - 1, c));
        }
    }
    (steps, risers)
}

fn stair_climber(spec: &TaskSpec, rng: &mut Rng) -> Result<Built, WorldError> {
    let mut g = GridState::enclosed(spec.height, spec.width)?;
    let (steps, risers) = stair_layout(spec);
    if steps.len() < 2 {
        return Err(WorldError::InvalidDims {
            height: spec.height,
            width: spec.width,
        });
    }
    let last_col = steps.last().map(|s| s.1).unwrap_or(1);
    for c in 1..spec.width - 1 {
        match steps.iter().find(|s| s.1 == c) {
            // Everything below a step is solid.
            Some(&(row, _)) => (row + 1..spec.height - 1).for_each(|r| g.set_wall(r, c, true)),
            None if c > last_col => (1..spec.height - 1).for_each(|r| g.set_wall(r, c, true)),
            None => {}
        }
    }
    let agent_i = rng.random_range(0..steps.len() - 1);
    let goal_i = rng.random_range(agent_i + 1..steps.len());
    let goal = steps[goal_i];
    g.set_markers(goal.0, goal.1, 1);
    g.set_agent(steps[agent_i], Direction::East);
    let mut stairs = steps;
    stairs.extend(risers);
    stairs.sort_unstable();
    Ok((g, TaskGoal::StairClimber { stairs, goal }))
}

fn four_corner(spec: &TaskSpec, rng: &mut Rng) -> Result<Built, WorldError> {
    let mut g = GridState::enclosed(spec.height, spec.width)?;
    let (b, r) = (spec.height - 2, spec.width - 2);
    let col = rng.random_range(1..=r);
    g.set_agent((b, col), Direction::East);
    Ok((
        g,
        TaskGoal::FourCorner {
            corners: [(1, 1), (1, r), (b, 1), (b, r)],
        },
    ))
}

fn topoff_candidates(spec: &TaskSpec) -> Vec<(usize, usize)> {
    // Every bottom-row cell except the bottom-right one.
    let b = spec.height - 2;
    (1..spec.width - 2).map(|c| (b, c)).collect()
}

fn topoff_from_mask(spec: &TaskSpec, mask: &[bool]) -> Result<Built, WorldError> {
    let mut g = GridState::enclosed(spec.height, spec.width)?;
    let marked: Vec<_> = topoff_candidates(spec)
        .into_iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| p)
        .collect();
    for &(r, c) in &marked {
        g.set_markers(r, c, 1);
    }
    let b = spec.height - 2;
    g.set_agent((b, 1), Direction::East);
    Ok((
        g,
        TaskGoal::TopOff {
            marked,
            last_cell: (b, spec.width - 2),
        },
    ))
}

fn maze(spec: &TaskSpec, rng: &mut Rng) -> Result<Built, WorldError> {
    let (h, w) = (spec.height, spec.width);
    let mut g = GridState::enclosed(h, w)?;
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            g.set_wall(r, c, true);
        }
    }
    // Randomized depth-first carving over the odd-coordinate lattice.
    let rows: Vec<usize> = (1..h - 1).step_by(2).collect();
    let cols: Vec<usize> = (1..w - 1).step_by(2).collect();
    let (nr, nc) = (rows.len(), cols.len());
    let mut visited = vec![false; nr * nc];
    let start = (rng.random_range(0..nr), rng.random_range(0..nc));
    let mut stack = vec![start];
    visited[start.0 * nc + start.1] = true;
    g.set_wall(rows[start.0], cols[start.1], false);
    while let Some(&(i, j)) = stack.last() {
        let mut next = Vec::with_capacity(4);
        if i > 0 && !visited[(i - 1) * nc + j] {
            next.push((i - 1, j));
        }
        if i + 1 < nr && !visited[(i + 1) * nc + j] {
            next.push((i + 1, j));
        }
        if j > 0 && !visited[i * nc + j - 1] {
            next.push((i, j - 1));
        }
        if j + 1 < nc && !visited[i * nc + j + 1] {
            next.push((i, j + 1));
        }
        match next.choose(rng) {
            Some(&(ni, nj)) => {
                visited[ni * nc + nj] = true;
                let (r0, c0) = (rows[i], cols[j]);
                let (r1, c1) = (rows[ni], cols[nj]);
                g.set_wall((r0 + r1) / 2, (c0 + c1) / 2, false);
                g.set_wall(r1, c1, false);
                stack.push((ni, nj));
            }
            None => {
                stack.pop();
            }
        }
    }
    let open: Vec<_> = g.open_cells().collect();
    let mut picks = open.choose_multiple(rng, 2);
    let agent = *picks.next().expect("maze has at least two open cells");
    let goal = *picks.next().expect("maze has at least two open cells");
    let dir = Direction::ALL[rng.random_range(0..4)];
    g.set_agent(agent, dir);
    g.set_markers(goal.0, goal.1, 1);
    Ok((g, TaskGoal::Maze { goal }))
}

fn clean_house(spec: &TaskSpec, rng: &mut Rng) -> Result<Built, WorldError> {
    let layout = if spec.is_default_size() {
        layout::apartment()?
    } else {
        Layout::generated_apartment(spec.height, spec.width)?
    };
    let mut g = layout.grid.clone();
    if layout.candidates.len() < CLEANHOUSE_GARBAGE {
        return Err(WorldError::Layout(format!(
            "need {CLEANHOUSE_GARBAGE} garbage candidates, layout has {}",
            layout.candidates.len()
        )));
    }
    let mut garbage: Vec<_> = layout
        .candidates
        .choose_multiple(rng, CLEANHOUSE_GARBAGE)
        .copied()
        .collect();
    garbage.sort_unstable();
    for &(r, c) in &garbage {
        g.set_markers(r, c, 1);
    }
    let (dr, dc) = layout.dustbin;
    g.set_markers(dr, dc, 2);
    Ok((
        g,
        TaskGoal::CleanHouse {
            garbage,
            dustbin: layout.dustbin,
        },
    ))
}

fn harvester_from_mask(spec: &TaskSpec, mask: &[bool]) -> Result<Built, WorldError> {
    let mut g = GridState::enclosed(spec.height, spec.width)?;
    let inner_w = spec.width - 2;
    let mut total = 0;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            g.set_markers(1 + i / inner_w, 1 + i % inner_w, 1);
            total += 1;
        }
    }
    g.set_agent((spec.height - 2, 1), Direction::East);
    Ok((g, TaskGoal::Harvester { total }))
}
