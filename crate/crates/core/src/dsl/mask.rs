//! Grammar automaton for syntax-constrained decoding.
//!
//! The state is an LL(1) prediction stack plus the running token count and
//! construct depth. A token is legal when the grammar admits it and the
//! shortest completion after it still fits in the length budget, so every
//! reachable unfinished state has at least one legal token.

use super::token::{Token, VOCAB_SIZE};
use crate::error::MaskError;

/// Maximum program length in tokens, `DEF` through `m)`.
pub const MAX_PROGRAM_TOKENS: usize = 45;
/// Maximum nesting of loop/conditional constructs.
pub const MAX_CONSTRUCT_DEPTH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MaskConfig {
    pub max_tokens: usize,
    pub max_depth: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            max_tokens: MAX_PROGRAM_TOKENS,
            max_depth: MAX_CONSTRUCT_DEPTH,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Sym {
    Tok(Token),
    /// Statement list closed by `close`. `first` means no statement has been
    /// read yet; `ends` means the closer also ends a construct.
    Block { close: Token, first: bool, ends: bool },
    Cond,
    Sensor,
    Count,
    Eos,
}

impl Sym {
    /// Fewest program tokens needed to discharge this symbol.
    fn min_len(self) -> usize {
        match self {
            Sym::Block { first: true, .. } => 2,
            Sym::Eos => 0,
            _ => 1,
        }
    }
}

/// Shortest complete statement starting with `tok`.
fn min_stmt_len(tok: Token) -> Option<usize> {
    match tok {
        Token::Act(_) => Some(1),
        Token::Repeat => Some(5),
        Token::While | Token::If => Some(7),
        Token::IfElse => Some(11),
        _ => None,
    }
}

/// Set of token indices as a bitmask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct TokenSet(pub u64);

impl TokenSet {
    pub fn contains(self, t: Token) -> bool {
        self.0 >> t.index() & 1 == 1
    }

    pub fn contains_index(self, i: usize) -> bool {
        i < 64 && self.0 >> i & 1 == 1
    }

    fn insert(&mut self, t: Token) {
        self.0 |= 1 << t.index();
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn tokens(self) -> impl Iterator<Item = Token> {
        (0..VOCAB_SIZE)
            .filter(move |&i| self.0 >> i & 1 == 1)
            .filter_map(Token::from_index)
    }

    /// Additive logit mask: 0 for legal entries, -inf for the rest.
    pub fn additive_mask(self) -> [f64; VOCAB_SIZE] {
        let mut m = [f64::NEG_INFINITY; VOCAB_SIZE];
        for (i, v) in m.iter_mut().enumerate() {
            if self.contains_index(i) {
                *v = 0.0;
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskState {
    stack: Vec<Sym>,
    len: usize,
    depth: usize,
    last: Option<Token>,
    cfg: MaskConfig,
}

pub fn mask_init() -> MaskState {
    MaskState::new(MaskConfig::default())
}

pub fn mask_step(ms: &MaskState, tok: Token) -> Result<MaskState, MaskError> {
    let mut next = ms.clone();
    next.advance(tok)?;
    Ok(next)
}

pub fn legal_tokens(ms: &MaskState) -> TokenSet {
    ms.legal()
}

impl MaskState {
    pub fn new(cfg: MaskConfig) -> MaskState {
        MaskState {
            stack: vec![
                Sym::Eos,
                Sym::Block {
                    close: Token::MClose,
                    first: true,
                    ends: false,
                },
                Sym::Tok(Token::MOpen),
                Sym::Tok(Token::Run),
                Sym::Tok(Token::Def),
            ],
            len: 0,
            depth: 0,
            last: None,
            cfg,
        }
    }

    /// True once the end-of-program token has been consumed.
    pub fn is_finished(&self) -> bool {
        self.stack.is_empty()
    }

    /// Program tokens consumed so far (the end token is not counted).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn last(&self) -> Option<Token> {
        self.last
    }

    fn min_remaining(&self) -> usize {
        self.stack.iter().map(|s| s.min_len()).sum()
    }

    /// Extra tokens the shortest completion needs if `tok` is read next, or
    /// None when the grammar or depth limit forbids it.
    fn growth(&self, tok: Token) -> Option<usize> {
        let top = *self.stack.last()?;
        match top {
            Sym::Tok(t) => (t == tok).then_some(0),
            Sym::Count => matches!(tok, Token::Count(_)).then_some(0),
            Sym::Sensor => matches!(tok, Token::Sense(_)).then_some(0),
            Sym::Cond => match tok {
                Token::Sense(_) => Some(0),
                Token::Not => Some(3),
                _ => None,
            },
            Sym::Eos => (tok == Token::End).then_some(0),
            Sym::Block { close, first, .. } => {
                if !first && tok == close {
                    return Some(0);
                }
                let len = min_stmt_len(tok)?;
                if len > 1 && self.depth >= self.cfg.max_depth {
                    return None;
                }
                Some(if first { len - 1 } else { len })
            }
        }
    }

    pub fn legal(&self) -> TokenSet {
        let mut set = TokenSet::default();
        if self.is_finished() {
            return set;
        }
        let budget = self.cfg.max_tokens.saturating_sub(self.len + self.min_remaining());
        for i in 0..VOCAB_SIZE {
            let tok = Token::from_index(i).expect("index in range");
            if matches!(self.growth(tok), Some(g) if g <= budget) {
                set.insert(tok);
            }
        }
        set
    }

    pub fn is_legal(&self, tok: Token) -> bool {
        let budget = self.cfg.max_tokens.saturating_sub(self.len + self.min_remaining());
        matches!(self.growth(tok), Some(g) if g <= budget)
    }

    /// Consumes `tok` in place.
    pub fn advance(&mut self, tok: Token) -> Result<(), MaskError> {
        if !self.is_legal(tok) {
            return Err(MaskError::Illegal {
                token: tok.text(),
                legal: self.legal().tokens().map(|t| t.text()).collect::<Vec<_>>().join(" "),
            });
        }
        let top = self.stack.pop().expect("legal token implies non-empty stack");
        match top {
            Sym::Tok(_) | Sym::Count | Sym::Sensor | Sym::Eos => {}
            Sym::Cond => {
                if tok == Token::Not {
                    self.stack.extend([Sym::Tok(Token::CClose), Sym::Sensor, Sym::Tok(Token::COpen)]);
                }
            }
            Sym::Block { close, ends, first } => {
                if !first && tok == close {
                    if ends {
                        self.depth -= 1;
                    }
                } else {
                    self.stack.push(Sym::Block { close, first: false, ends });
                    self.push_statement(tok);
                }
            }
        }
        if tok != Token::End {
            self.len += 1;
        }
        self.last = Some(tok);
        Ok(())
    }

    fn push_statement(&mut self, tok: Token) {
        let block = |close| Sym::Block {
            close,
            first: true,
            ends: true,
        };
        let cond_head = [Sym::Tok(Token::CClose), Sym::Cond, Sym::Tok(Token::COpen)];
        match tok {
            Token::Act(_) => return,
            Token::While => {
                self.stack.extend([block(Token::WClose), Sym::Tok(Token::WOpen)]);
                self.stack.extend(cond_head);
            }
            Token::Repeat => {
                self.stack.extend([block(Token::RClose), Sym::Tok(Token::ROpen), Sym::Count]);
            }
            Token::If => {
                self.stack.extend([block(Token::IClose), Sym::Tok(Token::IOpen)]);
                self.stack.extend(cond_head);
            }
            Token::IfElse => {
                self.stack.extend([
                    block(Token::EClose),
                    Sym::Tok(Token::EOpen),
                    Sym::Tok(Token::Else),
                    Sym::Block {
                        close: Token::IClose,
                        first: true,
                        ends: false,
                    },
                    Sym::Tok(Token::IOpen),
                ]);
                self.stack.extend(cond_head);
            }
            _ => unreachable!("checked by growth()"),
        }
        self.depth += 1;
    }
}

/// Feeds a whole program (without the end token) through the automaton.
pub fn accepts(tokens: &[Token], cfg: MaskConfig) -> Result<MaskState, (usize, MaskError)> {
    let mut ms = MaskState::new(cfg);
    for (i, &t) in tokens.iter().enumerate() {
        ms.advance(t).map_err(|e| (i, e))?;
    }
    Ok(ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::token::tokenize;

    fn state_after(text: &str) -> MaskState {
        accepts(&tokenize(text).unwrap(), MaskConfig::default()).unwrap()
    }

    #[test]
    fn while_must_be_followed_by_condition_open() {
        let ms = state_after("DEF run m( WHILE");
        let legal: Vec<_> = ms.legal().tokens().collect();
        assert_eq!(legal, vec![Token::COpen]);
    }

    #[test]
    fn frame_is_forced() {
        let ms = mask_init();
        assert_eq!(ms.legal().tokens().collect::<Vec<_>>(), vec![Token::Def]);
    }

    #[test]
    fn program_end_requires_end_token() {
        let ms = state_after("DEF run m( move m)");
        assert_eq!(ms.legal().tokens().collect::<Vec<_>>(), vec![Token::End]);
        let done = mask_step(&ms, Token::End).unwrap();
        assert!(done.is_finished());
        assert!(done.legal().is_empty());
    }

    #[test]
    fn budget_forces_closers() {
        // 43 tokens read and `w) m)` pending: the budget is spent.
        let mut text = String::from("DEF run m( WHILE c( frontIsClear c) w(");
        for _ in 0..35 {
            text.push_str(" move");
        }
        let ms = state_after(&text);
        assert_eq!(ms.len(), 43);
        let legal: Vec<_> = ms.legal().tokens().collect();
        assert_eq!(legal, vec![Token::WClose]);
        let ms = mask_step(&ms, Token::WClose).unwrap();
        assert_eq!(ms.legal().tokens().collect::<Vec<_>>(), vec![Token::MClose]);
    }

    #[test]
    fn budget_blocks_constructs_that_cannot_close() {
        let mut text = String::from("DEF run m(");
        for _ in 0..36 {
            text.push_str(" move");
        }
        let ms = state_after(&text);
        // 39 used, m) pending: 5 spare tokens. WHILE needs 7, REPEAT 5.
        let legal = ms.legal();
        assert!(!legal.contains(Token::While));
        assert!(!legal.contains(Token::IfElse));
        assert!(legal.contains(Token::Repeat));
        assert!(legal.contains(Token::MClose));
    }

    #[test]
    fn depth_limit() {
        let ms = state_after(
            "DEF run m( REPEAT R=1 r( REPEAT R=1 r( REPEAT R=1 r( REPEAT R=1 r(",
        );
        assert_eq!(ms.depth(), 4);
        let legal = ms.legal();
        assert!(!legal.contains(Token::Repeat) && !legal.contains(Token::While));
        assert!(legal.contains(Token::from(crate::world::Action::Move)));
    }

    #[test]
    fn illegal_step_is_an_error() {
        let ms = state_after("DEF run m( WHILE");
        assert!(mask_step(&ms, Token::Def).is_err());
    }

    #[test]
    fn additive_mask_values() {
        let ms = state_after("DEF run m( WHILE");
        let m = ms.legal().additive_mask();
        assert_eq!(m[Token::COpen.index()], 0.0);
        assert_eq!(m.iter().filter(|v| v.is_finite()).count(), 1);
    }
}
