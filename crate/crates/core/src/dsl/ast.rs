use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::parser::parse_text;
use super::token::{detokenize, Sensor, Token};
use crate::error::ParseError;
use crate::world::{Action, Perception};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cond {
    pub negated: bool,
    pub sensor: Sensor,
}

impl Cond {
    pub fn new(sensor: Sensor) -> Cond {
        Cond { negated: false, sensor }
    }

    pub fn not(sensor: Sensor) -> Cond {
        Cond { negated: true, sensor }
    }

    pub fn eval(&self, p: &Perception) -> bool {
        self.sensor.read(p) != self.negated
    }

    fn push_tokens(&self, out: &mut Vec<Token>) {
        if self.negated {
            out.extend([Token::Not, Token::COpen, Token::Sense(self.sensor), Token::CClose]);
        } else {
            out.push(Token::Sense(self.sensor));
        }
    }

    pub fn token_len(&self) -> usize {
        if self.negated {
            4
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stmt {
    Action(Action),
    While { cond: Cond, body: Vec<Stmt> },
    Repeat { count: u8, body: Vec<Stmt> },
    If { cond: Cond, body: Vec<Stmt> },
    IfElse { cond: Cond, then_body: Vec<Stmt>, else_body: Vec<Stmt> },
}

impl Stmt {
    /// Number of statement nodes in this subtree (preorder id span).
    pub fn size(&self) -> usize {
        1 + match self {
            Stmt::Action(_) => 0,
            Stmt::While { body, .. } | Stmt::Repeat { body, .. } | Stmt::If { body, .. } => block_size(body),
            Stmt::IfElse {
                then_body, else_body, ..
            } => block_size(then_body) + block_size(else_body),
        }
    }

    /// Nesting depth of loop/conditional constructs (an action has depth 0).
    pub fn depth(&self) -> usize {
        match self {
            Stmt::Action(_) => 0,
            Stmt::While { body, .. } | Stmt::Repeat { body, .. } | Stmt::If { body, .. } => 1 + block_depth(body),
            Stmt::IfElse {
                then_body, else_body, ..
            } => 1 + block_depth(then_body).max(block_depth(else_body)),
        }
    }

    fn push_tokens(&self, out: &mut Vec<Token>) {
        match self {
            Stmt::Action(a) => out.push(Token::from(*a)),
            Stmt::While { cond, body } => {
                out.extend([Token::While, Token::COpen]);
                cond.push_tokens(out);
                out.extend([Token::CClose, Token::WOpen]);
                push_block(body, out);
                out.push(Token::WClose);
            }
            Stmt::Repeat { count, body } => {
                out.extend([Token::Repeat, Token::Count(*count), Token::ROpen]);
                push_block(body, out);
                out.push(Token::RClose);
            }
            Stmt::If { cond, body } => {
                out.extend([Token::If, Token::COpen]);
                cond.push_tokens(out);
                out.extend([Token::CClose, Token::IOpen]);
                push_block(body, out);
                out.push(Token::IClose);
            }
            Stmt::IfElse {
                cond,
                then_body,
                else_body,
            } => {
                out.extend([Token::IfElse, Token::COpen]);
                cond.push_tokens(out);
                out.extend([Token::CClose, Token::IOpen]);
                push_block(then_body, out);
                out.extend([Token::IClose, Token::Else, Token::EOpen]);
                push_block(else_body, out);
                out.push(Token::EClose);
            }
        }
    }

    pub fn token_len(&self) -> usize {
        match self {
            Stmt::Action(_) => 1,
            Stmt::While { cond, body } | Stmt::If { cond, body } => 5 + cond.token_len() + block_token_len(body),
            Stmt::Repeat { body, .. } => 4 + block_token_len(body),
            Stmt::IfElse {
                cond,
                then_body,
                else_body,
            } => 8 + cond.token_len() + block_token_len(then_body) + block_token_len(else_body),
        }
    }
}

pub(crate) fn block_size(body: &[Stmt]) -> usize {
    body.iter().map(Stmt::size).sum()
}

fn block_depth(body: &[Stmt]) -> usize {
    body.iter().map(Stmt::depth).max().unwrap_or(0)
}

fn block_token_len(body: &[Stmt]) -> usize {
    body.iter().map(Stmt::token_len).sum()
}

fn push_block(body: &[Stmt], out: &mut Vec<Token>) {
    for s in body {
        s.push_tokens(out);
    }
}

/// A parsed program: `DEF run m( <body> m)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Program {
    pub body: Vec<Stmt>,
}

impl Program {
    pub fn new(body: Vec<Stmt>) -> Program {
        Program { body }
    }

    pub fn to_tokens(&self) -> Vec<Token> {
        let mut out = Vec::with_capacity(self.token_len());
        out.extend([Token::Def, Token::Run, Token::MOpen]);
        push_block(&self.body, &mut out);
        out.push(Token::MClose);
        out
    }

    /// Length of the token sequence including the `DEF run m( ... m)` frame.
    pub fn token_len(&self) -> usize {
        4 + block_token_len(&self.body)
    }

    pub fn depth(&self) -> usize {
        block_depth(&self.body)
    }

    /// Number of statement nodes.
    pub fn size(&self) -> usize {
        block_size(&self.body)
    }

    /// Canonical single-line text.
    pub fn to_text(&self) -> String {
        detokenize(&self.to_tokens())
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for Program {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_text(s)
    }
}

/// Canonical serialization of an AST.
pub fn print(ast: &Program) -> String {
    ast.to_text()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prints_minimal_program() {
        let p = Program::new(vec![Stmt::Action(Action::Move)]);
        assert_eq!(print(&p), "DEF run m( move m)");
    }

    #[test]
    fn prints_repeat_frame() {
        let p = Program::new(vec![Stmt::Repeat {
            count: 2,
            body: vec![Stmt::Action(Action::Move)],
        }]);
        assert_eq!(print(&p), "DEF run m( REPEAT R=2 r( move r) m)");
    }

    #[test]
    fn token_len_matches_printed_length() {
        let p: Program = "DEF run m( IFELSE c( not c( frontIsClear c) c) i( move i) ELSE e( turnLeft e) m)"
            .parse()
            .unwrap();
        assert_eq!(p.token_len(), p.to_tokens().len());
        assert_eq!(p.depth(), 1);
        assert_eq!(p.size(), 3);
        let q: Program = "DEF run m( WHILE c( frontIsClear c) w( IF c( not c( leftIsClear c) c) i( REPEAT R=3 r( move r) i) w) m)"
            .parse()
            .unwrap();
        assert_eq!(q.token_len(), q.to_tokens().len());
    }
}
