//! Statement-level edit distance.
//!
//! A program is flattened into its preorder sequence of statement heads
//! (constructs carry their condition or count, `ELSE` is its own unit) and
//! compared with unit-cost Levenshtein distance.

use super::ast::{Cond, Program, Stmt};
use crate::world::Action;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Unit {
    Action(Action),
    While(Cond),
    Repeat(u8),
    If(Cond),
    IfElse(Cond),
    Else,
}

pub fn units(program: &Program) -> Vec<Unit> {
    fn walk(body: &[Stmt], out: &mut Vec<Unit>) {
        for s in body {
            match s {
                Stmt::Action(a) => out.push(Unit::Action(*a)),
                Stmt::While { cond, body } => {
                    out.push(Unit::While(*cond));
                    walk(body, out);
                }
                Stmt::Repeat { count, body } => {
                    out.push(Unit::Repeat(*count));
                    walk(body, out);
                }
                Stmt::If { cond, body } => {
                    out.push(Unit::If(*cond));
                    walk(body, out);
                }
                Stmt::IfElse {
                    cond,
                    then_body,
                    else_body,
                } => {
                    out.push(Unit::IfElse(*cond));
                    walk(then_body, out);
                    out.push(Unit::Else);
                    walk(else_body, out);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(&program.body, &mut out);
    out
}

pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn statement_edit_distance(a: &Program, b: &Program) -> usize {
    levenshtein(&units(a), &units(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(a: &str, b: &str) -> usize {
        statement_edit_distance(&a.parse().unwrap(), &b.parse().unwrap())
    }

    #[test]
    fn identical_programs() {
        let p = "DEF run m( WHILE c( frontIsClear c) w( move w) m)";
        assert_eq!(d(p, p), 0);
    }

    #[test]
    fn single_action_substitution() {
        assert_eq!(d("DEF run m( move turnLeft m)", "DEF run m( move turnRight m)"), 1);
    }

    #[test]
    fn wrapping_in_a_loop_costs_one() {
        assert_eq!(
            d("DEF run m( move m)", "DEF run m( WHILE c( frontIsClear c) w( move w) m)"),
            1
        );
    }

    #[test]
    fn condition_change_is_a_substitution() {
        assert_eq!(
            d(
                "DEF run m( IF c( frontIsClear c) i( move i) m)",
                "DEF run m( IF c( not c( frontIsClear c) c) i( move i) m)"
            ),
            1
        );
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
        assert_eq!(levenshtein::<u8>(b"", b"abc"), 3);
    }
}
