//! Structural interpreter producing execution traces.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use super::ast::{block_size, Cond, Program, Stmt};
use crate::world::{Action, ActionFlags, GridState, Perception};

/// Execution budget. Actions are the environment timesteps; node visits
/// bound loops whose bodies never act.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecLimits {
    pub max_actions: usize,
    pub max_node_visits: usize,
}

impl ExecLimits {
    pub fn for_horizon(horizon: usize) -> ExecLimits {
        ExecLimits {
            max_actions: horizon,
            max_node_visits: (horizon * 100).max(10_000),
        }
    }
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits::for_horizon(100)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    /// `IF` condition held.
    Taken,
    /// `IF` condition failed.
    NotTaken,
    Then,
    Else,
    /// `WHILE` condition held on entry to the loop.
    Entered,
    /// `WHILE` condition failed on entry, body never ran.
    Skipped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BranchEvent {
    /// Preorder statement id.
    pub node: u32,
    pub branch: Branch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    ProgramEnd,
    StepCap,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rollout {
    pub initial: GridState,
    pub actions: Vec<Action>,
    /// Perception observed right before each action.
    pub perceptions: Vec<Perception>,
    pub flags: Vec<ActionFlags>,
    /// Statement id that emitted each action.
    pub action_nodes: Vec<u32>,
    pub branch_events: BTreeSet<BranchEvent>,
    pub terminated: Termination,
    pub final_state: GridState,
}

struct Halt;

struct Machine {
    state: GridState,
    limits: ExecLimits,
    visits: usize,
    actions: Vec<Action>,
    perceptions: Vec<Perception>,
    flags: Vec<ActionFlags>,
    action_nodes: Vec<u32>,
    branch_events: BTreeSet<BranchEvent>,
}

impl Machine {
    fn visit(&mut self) -> Result<(), Halt> {
        self.visits += 1;
        if self.visits > self.limits.max_node_visits {
            Err(Halt)
        } else {
            Ok(())
        }
    }

    fn test(&mut self, cond: &Cond) -> Result<bool, Halt> {
        self.visit()?;
        Ok(cond.eval(&self.state.perceive()))
    }

    fn block(&mut self, body: &[Stmt], first_id: u32) -> Result<(), Halt> {
        let mut id = first_id;
        for stmt in body {
            self.stmt(stmt, id)?;
            id += stmt.size() as u32;
        }
        Ok(())
    }

    fn stmt(&mut self, stmt: &Stmt, id: u32) -> Result<(), Halt> {
        self.visit()?;
        let child = id + 1;
        match stmt {
            Stmt::Action(a) => {
                if self.actions.len() >= self.limits.max_actions {
                    return Err(Halt);
                }
                self.perceptions.push(self.state.perceive());
                self.flags.push(self.state.step(*a));
                self.actions.push(*a);
                self.action_nodes.push(id);
            }
            Stmt::While { cond, body } => {
                let entered = self.test(cond)?;
                self.record(id, if entered { Branch::Entered } else { Branch::Skipped });
                let mut go = entered;
                while go {
                    self.block(body, child)?;
                    go = self.test(cond)?;
                }
            }
            Stmt::Repeat { count, body } => {
                for _ in 0..*count {
                    self.block(body, child)?;
                }
            }
            Stmt::If { cond, body } => {
                if self.test(cond)? {
                    self.record(id, Branch::Taken);
                    self.block(body, child)?;
                } else {
                    self.record(id, Branch::NotTaken);
                }
            }
            Stmt::IfElse {
                cond,
                then_body,
                else_body,
            } => {
                if self.test(cond)? {
                    self.record(id, Branch::Then);
                    self.block(then_body, child)?;
                } else {
                    self.record(id, Branch::Else);
                    self.block(else_body, child + block_size(then_body) as u32)?;
                }
            }
        }
        Ok(())
    }

    fn record(&mut self, node: u32, branch: Branch) {
        self.branch_events.insert(BranchEvent { node, branch });
    }
}

/// Runs `program` from `init`. Total: stops at the end of the program or
/// when the action/visit budget runs out.
pub fn execute(program: &Program, init: &GridState, limits: ExecLimits) -> Rollout {
    let mut m = Machine {
        state: init.clone(),
        limits,
        visits: 0,
        actions: Vec::new(),
        perceptions: Vec::new(),
        flags: Vec::new(),
        action_nodes: Vec::new(),
        branch_events: BTreeSet::new(),
    };
    let terminated = match m.block(&program.body, 0) {
        Ok(()) => Termination::ProgramEnd,
        Err(Halt) => Termination::StepCap,
    };
    Rollout {
        initial: init.clone(),
        actions: m.actions,
        perceptions: m.perceptions,
        flags: m.flags,
        action_nodes: m.action_nodes,
        branch_events: m.branch_events,
        terminated,
        final_state: m.state,
    }
}

/// Action sequence only, without the bookkeeping of a full [`Rollout`].
pub fn execute_actions(program: &Program, init: &GridState, limits: ExecLimits) -> Vec<Action> {
    execute(program, init, limits).actions
}

/// Every branch outcome a set of rollouts must exhibit for full coverage:
/// both arms of each `IF`/`IFELSE` and both entry outcomes of each `WHILE`.
pub fn branch_obligations(program: &Program) -> BTreeSet<BranchEvent> {
    fn walk(body: &[Stmt], first: u32, out: &mut BTreeSet<BranchEvent>) {
        let mut id = first;
        for s in body {
            let pair = match s {
                Stmt::Action(_) | Stmt::Repeat { .. } => None,
                Stmt::While { .. } => Some((Branch::Entered, Branch::Skipped)),
                Stmt::If { .. } => Some((Branch::Taken, Branch::NotTaken)),
                Stmt::IfElse { .. } => Some((Branch::Then, Branch::Else)),
            };
            if let Some((a, b)) = pair {
                out.insert(BranchEvent { node: id, branch: a });
                out.insert(BranchEvent { node: id, branch: b });
            }
            match s {
                Stmt::Action(_) => {}
                Stmt::While { body, .. } | Stmt::Repeat { body, .. } | Stmt::If { body, .. } => walk(body, id + 1, out),
                Stmt::IfElse {
                    then_body, else_body, ..
                } => {
                    walk(then_body, id + 1, out);
                    walk(else_body, id + 1 + block_size(then_body) as u32, out);
                }
            }
            id += s.size() as u32;
        }
    }
    let mut out = BTreeSet::new();
    walk(&program.body, 0, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Direction;

    fn corridor(open: usize) -> GridState {
        let mut g = GridState::enclosed(3, open + 3).unwrap();
        g.set_agent((1, 1), Direction::East);
        g
    }

    fn run(text: &str, g: &GridState) -> Rollout {
        execute(&text.parse().unwrap(), g, ExecLimits::default())
    }

    #[test]
    fn repeat_unrolls() {
        let r = run("DEF run m( REPEAT R=2 r( move r) m)", &corridor(5));
        assert_eq!(r.actions, vec![Action::Move, Action::Move]);
    }

    #[test]
    fn repeat_aliases_straight_line_code() {
        let g = corridor(5);
        let a = run("DEF run m( REPEAT R=2 r( move r) m)", &g);
        let b = run("DEF run m( move move m)", &g);
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn while_reevaluates_condition() {
        let r = run("DEF run m( WHILE c( frontIsClear c) w( move w) m)", &corridor(3));
        assert_eq!(r.actions, vec![Action::Move; 3]);
        assert_eq!(r.terminated, Termination::ProgramEnd);
        assert!(r.branch_events.contains(&BranchEvent {
            node: 0,
            branch: Branch::Entered
        }));
    }

    #[test]
    fn action_cap_stops_infinite_loops() {
        let r = run("DEF run m( WHILE c( noMarkersPresent c) w( turnLeft w) m)", &corridor(1));
        assert_eq!(r.actions.len(), 100);
        assert_eq!(r.terminated, Termination::StepCap);
    }

    #[test]
    fn visit_cap_stops_actionless_loops() {
        let r = run("DEF run m( WHILE c( noMarkersPresent c) w( REPEAT R=0 r( move r) w) m)", &corridor(1));
        assert!(r.actions.is_empty());
        assert_eq!(r.terminated, Termination::StepCap);
    }

    #[test]
    fn if_evaluates_once_and_records_arm() {
        let r = run("DEF run m( IFELSE c( frontIsClear c) i( move move i) ELSE e( turnLeft e) move m)", &corridor(1));
        // Condition is checked once at entry: both moves run even though the
        // second one is blocked.
        assert_eq!(r.actions, vec![Action::Move, Action::Move, Action::Move]);
        assert!(r.flags[1].blocked);
        assert_eq!(r.action_nodes, vec![1, 2, 4]);
        let ev: Vec<_> = r.branch_events.iter().copied().collect();
        assert_eq!(ev, vec![BranchEvent { node: 0, branch: Branch::Then }]);
    }

    #[test]
    fn obligations_enumerate_branch_points() {
        let p: Program = "DEF run m( IF c( leftIsClear c) i( WHILE c( frontIsClear c) w( move w) i) REPEAT R=3 r( turnLeft r) m)"
            .parse()
            .unwrap();
        let ob: Vec<_> = branch_obligations(&p).into_iter().collect();
        assert_eq!(ob.len(), 4);
        assert_eq!(ob[0].node, 0);
        assert_eq!(ob[2].node, 1);
    }

    #[test]
    fn perceptions_precede_actions() {
        let r = run("DEF run m( move move m)", &corridor(1));
        assert!(r.perceptions[0].front_is_clear);
        assert!(!r.perceptions[1].front_is_clear);
    }
}
