//! A second, deliberately naive Karel interpreter. It walks the program text
//! token by token and keeps its own copy of the grid, so it shares no code
//! with the library beyond the state constructor.

use progsynth::world::{Direction, GridState};
use rand::Rng;

const DELTA: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];
const CAP: u8 = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct World {
    pub h: usize,
    pub w: usize,
    pub walls: Vec<bool>,
    pub markers: Vec<u8>,
    pub pos: (usize, usize),
    /// 0 north, 1 east, 2 south, 3 west.
    pub dir: usize,
}

impl World {
    pub fn from_state(s: &GridState) -> World {
        let dir = match s.agent_dir() {
            Direction::North => 0,
            Direction::East => 1,
            Direction::South => 2,
            Direction::West => 3,
        };
        World {
            h: s.height(),
            w: s.width(),
            walls: s.walls().to_vec(),
            markers: s.markers().to_vec(),
            pos: s.agent_pos(),
            dir,
        }
    }

    fn ahead(&self, dir: usize) -> (usize, usize) {
        let (dr, dc) = DELTA[dir];
        ((self.pos.0 as isize + dr) as usize, (self.pos.1 as isize + dc) as usize)
    }

    fn clear(&self, dir: usize) -> bool {
        let (r, c) = self.ahead(dir);
        !self.walls[r * self.w + c]
    }

    fn here(&mut self) -> &mut u8 {
        let i = self.pos.0 * self.w + self.pos.1;
        &mut self.markers[i]
    }

    fn sense(&mut self, name: &str) -> bool {
        match name {
            "frontIsClear" => self.clear(self.dir),
            "leftIsClear" => self.clear((self.dir + 3) % 4),
            "rightIsClear" => self.clear((self.dir + 1) % 4),
            "markersPresent" => *self.here() > 0,
            "noMarkersPresent" => *self.here() == 0,
            other => panic!("unknown sensor {other}"),
        }
    }

    fn apply(&mut self, name: &str) {
        match name {
            "move" => {
                if self.clear(self.dir) {
                    self.pos = self.ahead(self.dir);
                }
            }
            "turnLeft" => self.dir = (self.dir + 3) % 4,
            "turnRight" => self.dir = (self.dir + 1) % 4,
            "pickMarker" => {
                let m = self.here();
                *m = m.saturating_sub(1);
            }
            "putMarker" => {
                let m = self.here();
                *m = (*m + 1).min(CAP);
            }
            other => panic!("unknown action {other}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub actions: Vec<String>,
    pub world: World,
    pub capped: bool,
}

const ACTIONS: [&str; 5] = ["move", "turnLeft", "turnRight", "pickMarker", "putMarker"];
const SENSORS: [&str; 5] = ["frontIsClear", "leftIsClear", "rightIsClear", "markersPresent", "noMarkersPresent"];

struct Halt;

struct Run<'a> {
    toks: Vec<&'a str>,
    world: World,
    actions: Vec<String>,
    visits: usize,
    max_actions: usize,
    max_visits: usize,
}

impl Run<'_> {
    fn visit(&mut self, live: bool) -> Result<(), Halt> {
        if live {
            self.visits += 1;
            if self.visits > self.max_visits {
                return Err(Halt);
            }
        }
        Ok(())
    }

    /// Statements up to and including the closing token; returns the index
    /// after it.
    fn block(&mut self, mut i: usize, live: bool) -> Result<usize, Halt> {
        while !self.toks[i].ends_with(')') {
            i = self.stmt(i, live)?;
        }
        Ok(i + 1)
    }

    /// `c( s c)` or `c( not c( s c) c)`.
    fn cond(&mut self, i: usize, live: bool) -> Result<(bool, usize), Halt> {
        self.visit(live)?;
        assert_eq!(self.toks[i], "c(");
        if self.toks[i + 1] == "not" {
            let v = live && !self.world.sense(self.toks[i + 3]);
            Ok((v, i + 6))
        } else {
            let v = live && self.world.sense(self.toks[i + 1]);
            Ok((v, i + 3))
        }
    }

    fn stmt(&mut self, i: usize, live: bool) -> Result<usize, Halt> {
        self.visit(live)?;
        let t = self.toks[i];
        match t {
            "WHILE" => {
                let (mut go, body) = self.cond(i + 1, live)?;
                let end = self.block(body + 1, false)?;
                while go {
                    self.block(body + 1, true)?;
                    go = self.cond(i + 1, true)?.0;
                }
                Ok(end)
            }
            "IF" => {
                let (go, body) = self.cond(i + 1, live)?;
                let end = self.block(body + 1, false)?;
                if go {
                    self.block(body + 1, true)?;
                }
                Ok(end)
            }
            "IFELSE" => {
                let (go, body) = self.cond(i + 1, live)?;
                let then_end = self.block(body + 1, false)?;
                assert_eq!(self.toks[then_end], "ELSE");
                let else_end = self.block(then_end + 2, false)?;
                if live {
                    if go {
                        self.block(body + 1, true)?;
                    } else {
                        self.block(then_end + 2, true)?;
                    }
                }
                Ok(else_end)
            }
            "REPEAT" => {
                let n: usize = self.toks[i + 1].strip_prefix("R=").unwrap().parse().unwrap();
                let end = self.block(i + 3, false)?;
                if live {
                    for _ in 0..n {
                        self.block(i + 3, true)?;
                    }
                }
                Ok(end)
            }
            a => {
                assert!(ACTIONS.contains(&a), "unexpected token {a}");
                if live {
                    if self.actions.len() >= self.max_actions {
                        return Err(Halt);
                    }
                    self.world.apply(a);
                    self.actions.push(a.to_string());
                }
                Ok(i + 1)
            }
        }
    }
}

/// Runs `DEF run m( ... m)` text. Every statement entered and every
/// condition tested costs one visit.
pub fn run(text: &str, init: &GridState, max_actions: usize, max_visits: usize) -> Outcome {
    let toks: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(&toks[..3], ["DEF", "run", "m("]);
    let mut r = Run {
        toks,
        world: World::from_state(init),
        actions: Vec::new(),
        visits: 0,
        max_actions,
        max_visits,
    };
    let capped = match r.block(3, true) {
        Ok(end) => {
            assert_eq!(end, r.toks.len());
            false
        }
        Err(Halt) => true,
    };
    Outcome {
        actions: r.actions,
        world: r.world,
        capped,
    }
}

fn cond_text(rng: &mut impl Rng) -> String {
    let s = SENSORS[rng.random_range(0..5)];
    if rng.random_bool(0.3) {
        format!("c( not c( {s} c) c)")
    } else {
        format!("c( {s} c)")
    }
}

fn block_text(rng: &mut impl Rng, depth: usize) -> String {
    let n = rng.random_range(1..=3);
    (0..n).map(|_| stmt_text(rng, depth)).collect::<Vec<_>>().join(" ")
}

fn stmt_text(rng: &mut impl Rng, depth: usize) -> String {
    let kind = if depth == 0 { 0 } else { rng.random_range(0..8) };
    match kind {
        4 => format!("WHILE {} w( {} w)", cond_text(rng), block_text(rng, depth - 1)),
        5 => format!("IF {} i( {} i)", cond_text(rng), block_text(rng, depth - 1)),
        6 => format!(
            "IFELSE {} i( {} i) ELSE e( {} e)",
            cond_text(rng),
            block_text(rng, depth - 1),
            block_text(rng, depth - 1)
        ),
        7 => format!("REPEAT R={} r( {} r)", rng.random_range(0..=19), block_text(rng, depth - 1)),
        _ => ACTIONS[rng.random_range(0..5)].to_string(),
    }
}

/// Random well-formed program text of at most `max_tokens` tokens.
pub fn random_program_text(rng: &mut impl Rng, max_tokens: usize) -> String {
    loop {
        let text = format!("DEF run m( {} m)", block_text(rng, 3));
        if text.split_whitespace().count() <= max_tokens {
            return text;
        }
    }
}

/// Random enclosed grid with interior walls, marker piles up to the cap and
/// the agent on an open cell.
pub fn random_state(rng: &mut impl Rng, h: usize, w: usize) -> GridState {
    let mut walls = vec![false; h * w];
    let mut markers = vec![0u8; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            walls[i] = r == 0 || c == 0 || r == h - 1 || c == w - 1 || rng.random_bool(0.2);
        }
    }
    let pos = (rng.random_range(1..h - 1), rng.random_range(1..w - 1));
    walls[pos.0 * w + pos.1] = false;
    for i in 0..h * w {
        if !walls[i] && rng.random_bool(0.3) {
            markers[i] = rng.random_range(1..=CAP);
        }
    }
    let dir = Direction::ALL[rng.random_range(0..4)];
    GridState::from_parts(h, w, walls, markers, pos, dir).unwrap()
}
