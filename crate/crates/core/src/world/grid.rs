//! Karel gridworld state, actions and perceptions.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::WorldError;

/// Maximum number of markers a single cell can hold.
pub const MARKER_CAP: u8 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
    ];

    pub fn left(self) -> Direction {
        match self {
            Direction::North => Direction::West,
            Direction::West => Direction::South,
            Direction::South => Direction::East,
            Direction::East => Direction::North,
        }
    }

    pub fn right(self) -> Direction {
        match self {
            Direction::North => Direction::East,
            Direction::East => Direction::South,
            Direction::South => Direction::West,
            Direction::West => Direction::North,
        }
    }

    /// (row, col) offset of one step in this direction. Row 0 is the top row.
    pub fn offset(self) -> (isize, isize) {
        match self {
            Direction::North => (-1, 0),
            Direction::East => (0, 1),
            Direction::South => (1, 0),
            Direction::West => (0, -1),
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Direction> {
        Direction::ALL.get(i as usize).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Move,
    TurnLeft,
    TurnRight,
    PickMarker,
    PutMarker,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [
        Action::Move,
        Action::TurnLeft,
        Action::TurnRight,
        Action::PickMarker,
        Action::PutMarker,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Move => "move",
            Action::TurnLeft => "turnLeft",
            Action::TurnRight => "turnRight",
            Action::PickMarker => "pickMarker",
            Action::PutMarker => "putMarker",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What happened when an action was applied. Degenerate actions leave the
/// state untouched and are reported here instead of failing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionFlags {
    pub blocked: bool,
    pub empty_pick: bool,
    pub overflow: bool,
}

impl ActionFlags {
    pub fn is_noop(&self) -> bool {
        self.blocked || self.empty_pick || self.overflow
    }
}

/// The five boolean sensors available to programs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Perception {
    pub front_is_clear: bool,
    pub left_is_clear: bool,
    pub right_is_clear: bool,
    pub markers_present: bool,
    pub no_markers_present: bool,
}

impl Perception {
    pub const COUNT: usize = 5;

    pub fn to_bits(self) -> u8 {
        (self.front_is_clear as u8)
            | (self.left_is_clear as u8) << 1
            | (self.right_is_clear as u8) << 2
            | (self.markers_present as u8) << 3
            | (self.no_markers_present as u8) << 4
    }

    pub fn from_bits(bits: u8) -> Perception {
        Perception {
            front_is_clear: bits & 1 != 0,
            left_is_clear: bits & 2 != 0,
            right_is_clear: bits & 4 != 0,
            markers_present: bits & 8 != 0,
            no_markers_present: bits & 16 != 0,
        }
    }

    pub fn as_array(self) -> [bool; 5] {
        [
            self.front_is_clear,
            self.left_is_clear,
            self.right_is_clear,
            self.markers_present,
            self.no_markers_present,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    height: usize,
    width: usize,
    walls: Vec<bool>,
    markers: Vec<u8>,
    agent_pos: (usize, usize),
    agent_dir: Direction,
}

impl GridState {
    /// An enclosed grid with only the boundary ring walled off. The agent
    /// starts in the top-left open cell facing east.
    pub fn enclosed(height: usize, width: usize) -> Result<GridState, WorldError> {
        if height < 3 || width < 3 {
            return Err(WorldError::InvalidDims { height, width });
        }
        let mut walls = vec![false; height * width];
        for r in 0..height {
            for c in 0..width {
                if r == 0 || c == 0 || r == height - 1 || c == width - 1 {
                    walls[r * width + c] = true;
                }
            }
        }
        Ok(GridState {
            height,
            width,
            walls,
            markers: vec![0; height * width],
            agent_pos: (1, 1),
            agent_dir: Direction::East,
        })
    }

    /// Builds a state from raw parts and checks every invariant.
    pub fn from_parts(
        height: usize,
        width: usize,
        walls: Vec<bool>,
        markers: Vec<u8>,
        agent_pos: (usize, usize),
        agent_dir: Direction,
    ) -> Result<GridState, WorldError> {
        let state = GridState {
            height,
            width,
            walls,
            markers,
            agent_pos,
            agent_dir,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let (h, w) = (self.height, self.width);
        if h < 3 || w < 3 {
            return Err(WorldError::InvalidDims {
                height: h,
                width: w,
            });
        }
        if self.walls.len() != h * w || self.markers.len() != h * w {
            return Err(WorldError::Invalid("cell vectors do not match dims".into()));
        }
        for r in 0..h {
            for c in 0..w {
                let boundary = r == 0 || c == 0 || r == h - 1 || c == w - 1;
                if boundary && !self.walls[r * w + c] {
                    return Err(WorldError::Invalid(format!("boundary cell ({r},{c}) is open")));
                }
            }
        }
        if let Some(i) = self.markers.iter().position(|&m| m > MARKER_CAP) {
            return Err(WorldError::Invalid(format!(
                "cell ({},{}) holds more than {MARKER_CAP} markers",
                i / w,
                i % w
            )));
        }
        if let Some(i) = (0..h * w).find(|&i| self.walls[i] && self.markers[i] > 0) {
            return Err(WorldError::Invalid(format!(
                "wall cell ({},{}) holds markers",
                i / w,
                i % w
            )));
        }
        let (ar, ac) = self.agent_pos;
        if ar >= h || ac >= w || self.walls[ar * w + ac] {
            return Err(WorldError::Invalid(format!(
                "agent at ({ar},{ac}) is out of bounds or on a wall"
            )));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn agent_pos(&self) -> (usize, usize) {
        self.agent_pos
    }

    pub fn agent_dir(&self) -> Direction {
        self.agent_dir
    }

    pub fn is_wall(&self, r: usize, c: usize) -> bool {
        self.walls[r * self.width + c]
    }

    pub fn markers_at(&self, r: usize, c: usize) -> u8 {
        self.markers[r * self.width + c]
    }

    pub fn total_markers(&self) -> u32 {
        self.markers.iter().map(|&m| m as u32).sum()
    }

    pub fn walls(&self) -> &[bool] {
        &self.walls
    }

    pub fn markers(&self) -> &[u8] {
        &self.markers
    }

    /// Open (non-wall) cells in row-major order.
    pub fn open_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height * self.width)
            .filter(|&i| !self.walls[i])
            .map(|i| (i / self.width, i % self.width))
    }

    // Setters keep the invariants local to world construction code.

    pub(crate) fn set_wall(&mut self, r: usize, c: usize, wall: bool) {
        let i = r * self.width + c;
        self.walls[i] = wall;
        if wall {
            self.markers[i] = 0;
        }
    }

    pub(crate) fn set_markers(&mut self, r: usize, c: usize, n: u8) {
        self.markers[r * self.width + c] = n.min(MARKER_CAP);
    }

    pub(crate) fn set_agent(&mut self, pos: (usize, usize), dir: Direction) {
        self.agent_pos = pos;
        self.agent_dir = dir;
    }

    fn neighbor(&self, dir: Direction) -> (usize, usize) {
        let (dr, dc) = dir.offset();
        let (r, c) = self.agent_pos;
        // The boundary ring is always walled, so the agent is never on an
        // edge and the neighbor is always in bounds.
        ((r as isize + dr) as usize, (c as isize + dc) as usize)
    }

    fn is_clear(&self, dir: Direction) -> bool {
        let (r, c) = self.neighbor(dir);
        !self.is_wall(r, c)
    }

    /// Applies an action in place.
    pub fn step(&mut self, action: Action) -> ActionFlags {
        let mut flags = ActionFlags::default();
        match action {
            Action::Move => {
                if self.is_clear(self.agent_dir) {
                    self.agent_pos = self.neighbor(self.agent_dir);
                } else {
                    flags.blocked = true;
                }
            }
            Action::TurnLeft => self.agent_dir = self.agent_dir.left(),
            Action::TurnRight => self.agent_dir = self.agent_dir.right(),
            Action::PickMarker => {
                let i = self.agent_pos.0 * self.width + self.agent_pos.1;
                if self.markers[i] > 0 {
                    self.markers[i] -= 1;
                } else {
                    flags.empty_pick = true;
                }
            }
            Action::PutMarker => {
                let i = self.agent_pos.0 * self.width + self.agent_pos.1;
                if self.markers[i] < MARKER_CAP {
                    self.markers[i] += 1;
                } else {
                    flags.overflow = true;
                }
            }
        }
        flags
    }

    pub fn perceive(&self) -> Perception {
        let (r, c) = self.agent_pos;
        let present = self.markers_at(r, c) > 0;
        Perception {
            front_is_clear: self.is_clear(self.agent_dir),
            left_is_clear: self.is_clear(self.agent_dir.left()),
            right_is_clear: self.is_clear(self.agent_dir.right()),
            markers_present: present,
            no_markers_present: !present,
        }
    }

    /// One line per row: `#` wall, `.` empty, digit for a marker count
    /// (`+` above 9), agent drawn as `^ > v <`.
    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                let ch = if (r, c) == self.agent_pos {
                    match self.agent_dir {
                        Direction::North => '^',
                        Direction::East => '>',
                        Direction::South => 'v',
                        Direction::West => '<',
                    }
                } else if self.is_wall(r, c) {
                    '#'
                } else {
                    match self.markers_at(r, c) {
                        0 => '.',
                        n @ 1..=9 => (b'0' + n) as char,
                        _ => '+',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

/// Pure form of [`GridState::step`].
pub fn apply_action(state: &GridState, action: Action) -> (GridState, ActionFlags) {
    let mut next = state.clone();
    let flags = next.step(action);
    (next, flags)
}

pub fn perceive(state: &GridState) -> Perception {
    state.perceive()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor() -> GridState {
        // 3 open cells east of the agent, then the boundary wall.
        let mut g = GridState::enclosed(3, 6).unwrap();
        g.set_agent((1, 1), Direction::East);
        g
    }

    #[test]
    fn blocked_move_keeps_pose() {
        let mut g = GridState::enclosed(3, 3).unwrap();
        g.set_agent((1, 1), Direction::North);
        let (next, flags) = apply_action(&g, Action::Move);
        assert!(flags.blocked);
        assert_eq!(next, g);
    }

    #[test]
    fn four_left_turns_is_identity() {
        let g = corridor();
        let mut s = g.clone();
        for _ in 0..4 {
            s.step(Action::TurnLeft);
        }
        assert_eq!(s, g);
    }

    #[test]
    fn pick_decrements_once() {
        let mut g = corridor();
        g.set_markers(1, 1, 2);
        let (next, flags) = apply_action(&g, Action::PickMarker);
        assert!(!flags.is_noop());
        assert_eq!(next.markers_at(1, 1), 1);
    }

    #[test]
    fn empty_pick_and_overflow_are_flagged_noops() {
        let mut g = corridor();
        let (next, flags) = apply_action(&g, Action::PickMarker);
        assert!(flags.empty_pick);
        assert_eq!(next, g);
        g.set_markers(1, 1, MARKER_CAP);
        let (next, flags) = apply_action(&g, Action::PutMarker);
        assert!(flags.overflow);
        assert_eq!(next, g);
    }

    #[test]
    fn enclosed_agent_sees_no_clear_side() {
        let g = GridState::enclosed(3, 3).unwrap();
        let p = g.perceive();
        assert!(!p.front_is_clear && !p.left_is_clear && !p.right_is_clear);
    }

    #[test]
    fn marker_perception_is_a_complement_pair() {
        let mut g = corridor();
        g.set_markers(1, 1, 1);
        let p = g.perceive();
        assert!(p.markers_present);
        assert!(!p.no_markers_present);
    }

    #[test]
    fn perception_is_direction_relative() {
        let g = corridor();
        let p = g.perceive();
        assert!(p.front_is_clear);
        assert!(!p.left_is_clear);
        assert!(!p.right_is_clear);
        let mut south = g.clone();
        south.set_agent((1, 1), Direction::South);
        let p = south.perceive();
        // Facing south in a 1-high corridor: east is on the left.
        assert!(!p.front_is_clear && p.left_is_clear && !p.right_is_clear);
    }

    #[test]
    fn perception_bits_round_trip() {
        for bits in 0..32u8 {
            assert_eq!(Perception::from_bits(bits).to_bits(), bits);
        }
    }

    #[test]
    fn validate_rejects_open_boundary() {
        let g = GridState::enclosed(4, 4).unwrap();
        let mut walls = g.walls().to_vec();
        walls[1] = false;
        let err = GridState::from_parts(4, 4, walls, g.markers().to_vec(), (1, 1), Direction::East);
        assert!(err.is_err());
    }
}
