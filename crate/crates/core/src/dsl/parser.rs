//! Recursive-descent parser. The grammar is LL(1) over the token vocabulary,
//! so every decision is made on the next token alone.

use super::ast::{Cond, Program, Stmt};
use super::token::{tokenize, Token};
use crate::error::ParseError;

pub fn parse(tokens: &[Token]) -> Result<Program, ParseError> {
    let mut p = Parser { tokens, pos: 0 };
    p.expect(Token::Def)?;
    p.expect(Token::Run)?;
    p.expect(Token::MOpen)?;
    let body = p.block(Token::MClose)?;
    if p.pos != tokens.len() {
        return Err(p.error("trailing tokens after m)"));
    }
    Ok(Program::new(body))
}

pub fn parse_text(text: &str) -> Result<Program, ParseError> {
    let tokens = tokenize(text).map_err(|(index, word)| ParseError {
        index,
        message: format!("unknown token `{word}`"),
    })?;
    parse(&tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).copied()
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            index: self.pos,
            message: message.into(),
        }
    }

    fn expect(&mut self, want: Token) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if t == want => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.error(format!("expected `{want}`, found `{t}`"))),
            None => Err(self.error(format!("expected `{want}`, found end of program"))),
        }
    }

    /// One or more statements followed by `close`.
    fn block(&mut self, close: Token) -> Result<Vec<Stmt>, ParseError> {
        let mut body = vec![self.stmt()?];
        loop {
            match self.peek() {
                Some(t) if t == close => {
                    self.pos += 1;
                    return Ok(body);
                }
                Some(_) => body.push(self.stmt()?),
                None => return Err(self.error(format!("expected `{close}`, found end of program"))),
            }
        }
    }

    fn cond(&mut self) -> Result<Cond, ParseError> {
        self.expect(Token::COpen)?;
        let cond = match self.peek() {
            Some(Token::Sense(s)) => {
                self.pos += 1;
                Cond::new(s)
            }
            Some(Token::Not) => {
                self.pos += 1;
                self.expect(Token::COpen)?;
                let s = self.sensor()?;
                self.expect(Token::CClose)?;
                Cond::not(s)
            }
            _ => return Err(self.unexpected("a perception or `not`")),
        };
        self.expect(Token::CClose)?;
        Ok(cond)
    }

    fn sensor(&mut self) -> Result<super::token::Sensor, ParseError> {
        match self.peek() {
            Some(Token::Sense(s)) => {
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.unexpected("a perception")),
        }
    }

    fn unexpected(&self, what: &str) -> ParseError {
        match self.peek() {
            Some(t) => self.error(format!("expected {what}, found `{t}`")),
            None => self.error(format!("expected {what}, found end of program")),
        }
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let Some(tok) = self.peek() else {
            return Err(self.unexpected("a statement"));
        };
        match tok {
            Token::Act(a) => {
                self.pos += 1;
                Ok(Stmt::Action(a.action()))
            }
            Token::While => {
                self.pos += 1;
                let cond = self.cond()?;
                self.expect(Token::WOpen)?;
                let body = self.block(Token::WClose)?;
                Ok(Stmt::While { cond, body })
            }
            Token::Repeat => {
                self.pos += 1;
                let count = match self.peek() {
                    Some(Token::Count(n)) => {
                        self.pos += 1;
                        n
                    }
                    _ => return Err(self.unexpected("a repeat count `R=n`")),
                };
                self.expect(Token::ROpen)?;
                let body = self.block(Token::RClose)?;
                Ok(Stmt::Repeat { count, body })
            }
            Token::If => {
                self.pos += 1;
                let cond = self.cond()?;
                self.expect(Token::IOpen)?;
                let body = self.block(Token::IClose)?;
                Ok(Stmt::If { cond, body })
            }
            Token::IfElse => {
                self.pos += 1;
                let cond = self.cond()?;
                self.expect(Token::IOpen)?;
                let then_body = self.block(Token::IClose)?;
                self.expect(Token::Else)?;
                self.expect(Token::EOpen)?;
                let else_body = self.block(Token::EClose)?;
                Ok(Stmt::IfElse {
                    cond,
                    then_body,
                    else_body,
                })
            }
            _ => Err(self.unexpected("a statement")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::token::Sensor;
    use crate::world::Action;

    #[test]
    fn minimal_program() {
        let p = parse_text("DEF run m( move m)").unwrap();
        assert_eq!(p.body, vec![Stmt::Action(Action::Move)]);
    }

    #[test]
    fn while_loop() {
        let p = parse_text("DEF run m( WHILE c( frontIsClear c) w( move w) m)").unwrap();
        assert_eq!(
            p.body,
            vec![Stmt::While {
                cond: Cond::new(Sensor::FrontIsClear),
                body: vec![Stmt::Action(Action::Move)],
            }]
        );
    }

    #[test]
    fn while_without_condition_fails_at_token_4() {
        let err = parse_text("DEF run m( WHILE move m)").unwrap_err();
        assert_eq!(err.index, 4);
    }

    #[test]
    fn error_positions() {
        assert_eq!(parse_text("").unwrap_err().index, 0);
        assert_eq!(parse_text("DEF run m( m)").unwrap_err().index, 3);
        assert_eq!(parse_text("DEF run m( move").unwrap_err().index, 4);
        assert_eq!(parse_text("DEF run m( move m) move").unwrap_err().index, 5);
        assert_eq!(parse_text("DEF run m( jump m)").unwrap_err().index, 3);
        assert_eq!(parse_text("DEF run m( REPEAT r( move r) m)").unwrap_err().index, 4);
        assert_eq!(parse_text("DEF run m( IFELSE c( leftIsClear c) i( move i) move m)").unwrap_err().index, 10);
    }

    #[test]
    fn control_tokens_are_not_statements() {
        assert!(parse_text("DEF run m( </s> m)").is_err());
    }
}
