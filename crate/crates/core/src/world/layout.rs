//! Text grid layouts (used for the CleanHouse apartment).
//!
//! Format: one line per row, `#` wall, `.` open, `M` garbage candidate cell,
//! `D` dustbin, `A` agent start (facing east).

use super::grid::{Direction, GridState};
use crate::error::WorldError;

const APARTMENT: &str = include_str!("../../data/cleanhouse.txt");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub grid: GridState,
    pub candidates: Vec<(usize, usize)>,
    pub dustbin: (usize, usize),
}

/// The checked-in 14x22 apartment.
pub fn apartment() -> Result<Layout, WorldError> {
    Layout::parse(APARTMENT)
}

impl Layout {
    pub fn parse(text: &str) -> Result<Layout, WorldError> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let height = rows.len();
        let width = rows.first().map(|r| r.chars().count()).unwrap_or(0);
        if rows.iter().any(|r| r.chars().count() != width) {
            return Err(WorldError::Layout("ragged rows".into()));
        }
        let mut grid = GridState::enclosed(height, width)?;
        let mut candidates = Vec::new();
        let mut agent = None;
        let mut dustbin = None;
        for (r, row) in rows.iter().enumerate() {
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '#' => grid.set_wall(r, c, true),
                    '.' => grid.set_wall(r, c, false),
                    'M' => {
                        grid.set_wall(r, c, false);
                        candidates.push((r, c));
                    }
                    'D' => {
                        grid.set_wall(r, c, false);
                        dustbin = Some((r, c));
                    }
                    'A' => {
                        grid.set_wall(r, c, false);
                        agent = Some((r, c));
                    }
                    other => return Err(WorldError::Layout(format!("unexpected `{other}` at ({r},{c})"))),
                }
            }
        }
        let agent = agent.ok_or_else(|| WorldError::Layout("no agent start".into()))?;
        let dustbin = dustbin.ok_or_else(|| WorldError::Layout("no dustbin".into()))?;
        grid.set_agent(agent, Direction::East);
        grid.validate()?;
        Ok(Layout {
            grid,
            candidates,
            dustbin,
        })
    }

    /// A procedurally partitioned apartment for non-default sizes: rooms of
    /// roughly 6x6 separated by walls with doorways. Every open cell next to
    /// a wall is a garbage candidate.
    pub fn generated_apartment(height: usize, width: usize) -> Result<Layout, WorldError> {
        let mut grid = GridState::enclosed(height, width)?;
        const ROOM: usize = 7;
        for c in (ROOM..width - 2).step_by(ROOM) {
            for r in 1..height - 1 {
                grid.set_wall(r, c, true);
            }
        }
        for r in (ROOM..height - 2).step_by(ROOM) {
            for c in 1..width - 1 {
                grid.set_wall(r, c, true);
            }
        }
        // Doorways: one per wall segment between adjacent rooms.
        let row_lines: Vec<usize> = std::iter::once(0)
            .chain((ROOM..height - 2).step_by(ROOM))
            .chain(std::iter::once(height - 1))
            .collect();
        let col_lines: Vec<usize> = std::iter::once(0)
            .chain((ROOM..width - 2).step_by(ROOM))
            .chain(std::iter::once(width - 1))
            .collect();
        for &c in &col_lines[1..col_lines.len() - 1] {
            for pair in row_lines.windows(2) {
                grid.set_wall((pair[0] + pair[1]) / 2, c, false);
            }
        }
        for &r in &row_lines[1..row_lines.len() - 1] {
            for pair in col_lines.windows(2) {
                grid.set_wall(r, (pair[0] + pair[1]) / 2, false);
            }
        }
        let agent = (1, 1);
        let dustbin = (height - 2, width - 2);
        grid.set_wall(agent.0, agent.1, false);
        grid.set_wall(dustbin.0, dustbin.1, false);
        grid.set_agent(agent, Direction::East);
        let candidates = grid
            .open_cells()
            .filter(|&p| p != agent && p != dustbin)
            .filter(|&(r, c)| grid.is_wall(r - 1, c) || grid.is_wall(r + 1, c) || grid.is_wall(r, c - 1) || grid.is_wall(r, c + 1))
            .collect();
        grid.validate()?;
        Ok(Layout {
            grid,
            candidates,
            dustbin,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashSet, VecDeque};

    fn all_open_connected(g: &GridState) -> bool {
        let open: Vec<_> = g.open_cells().collect();
        let mut seen = HashSet::new();
        let mut q = VecDeque::from([open[0]]);
        while let Some((r, c)) = q.pop_front() {
            if !seen.insert((r, c)) {
                continue;
            }
            for (nr, nc) in [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)] {
                if !g.is_wall(nr, nc) {
                    q.push_back((nr, nc));
                }
            }
        }
        seen.len() == open.len()
    }

    #[test]
    fn apartment_is_14_by_22_and_connected() {
        let l = apartment().unwrap();
        assert_eq!((l.grid.height(), l.grid.width()), (14, 22));
        assert!(all_open_connected(&l.grid));
        assert!(l.candidates.len() >= 10);
        for &(r, c) in &l.candidates {
            let g = &l.grid;
            assert!(g.is_wall(r - 1, c) || g.is_wall(r + 1, c) || g.is_wall(r, c - 1) || g.is_wall(r, c + 1));
        }
    }

    #[test]
    fn generated_apartments_are_connected() {
        for (h, w) in [(14, 22), (30, 17), (100, 100)] {
            let l = Layout::generated_apartment(h, w).unwrap();
            assert!(all_open_connected(&l.grid), "{h}x{w}");
            assert!(l.candidates.len() >= 10);
        }
    }

    #[test]
    fn rejects_unknown_glyph() {
        assert!(Layout::parse("###\n#X#\n###\n").is_err());
    }
}
