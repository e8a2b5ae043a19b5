//! Token vocabulary. Indices are stable and recorded in checkpoints.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::world::{Action, Perception};

/// Largest `REPEAT` count literal (`R=19`).
pub const MAX_REPEAT: u8 = 19;
/// Number of DSL symbols (excluding the network control tokens).
pub const DSL_VOCAB: usize = 50;
/// DSL symbols plus `<pad>`, `<s>`, `</s>`.
pub const VOCAB_SIZE: usize = DSL_VOCAB + 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sensor {
    FrontIsClear,
    LeftIsClear,
    RightIsClear,
    MarkersPresent,
    NoMarkersPresent,
}

impl Sensor {
    pub const ALL: [Sensor; 5] = [
        Sensor::FrontIsClear,
        Sensor::LeftIsClear,
        Sensor::RightIsClear,
        Sensor::MarkersPresent,
        Sensor::NoMarkersPresent,
    ];

    pub fn read(self, p: &Perception) -> bool {
        match self {
            Sensor::FrontIsClear => p.front_is_clear,
            Sensor::LeftIsClear => p.left_is_clear,
            Sensor::RightIsClear => p.right_is_clear,
            Sensor::MarkersPresent => p.markers_present,
            Sensor::NoMarkersPresent => p.no_markers_present,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sensor::FrontIsClear => "frontIsClear",
            Sensor::LeftIsClear => "leftIsClear",
            Sensor::RightIsClear => "rightIsClear",
            Sensor::MarkersPresent => "markersPresent",
            Sensor::NoMarkersPresent => "noMarkersPresent",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Token {
    Def,
    Run,
    MOpen,
    MClose,
    Act(ActionToken),
    While,
    Repeat,
    If,
    IfElse,
    Else,
    Not,
    COpen,
    CClose,
    WOpen,
    WClose,
    IOpen,
    IClose,
    EOpen,
    EClose,
    ROpen,
    RClose,
    Sense(Sensor),
    Count(u8),
    Pad,
    Start,
    End,
}

/// Action wrapper with a total order so tokens can be sorted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionToken(pub u8);

impl ActionToken {
    pub fn action(self) -> Action {
        Action::from_index(self.0 as usize).expect("action token index in range")
    }
}

impl From<Action> for Token {
    fn from(a: Action) -> Token {
        Token::Act(ActionToken(a.index() as u8))
    }
}

const FIXED: [(Token, &str); 21] = [
    (Token::Def, "DEF"),
    (Token::Run, "run"),
    (Token::MOpen, "m("),
    (Token::MClose, "m)"),
    (Token::While, "WHILE"),
    (Token::Repeat, "REPEAT"),
    (Token::If, "IF"),
    (Token::IfElse, "IFELSE"),
    (Token::Else, "ELSE"),
    (Token::Not, "not"),
    (Token::COpen, "c("),
    (Token::CClose, "c)"),
    (Token::WOpen, "w("),
    (Token::WClose, "w)"),
    (Token::IOpen, "i("),
    (Token::IClose, "i)"),
    (Token::EOpen, "e("),
    (Token::EClose, "e)"),
    (Token::ROpen, "r("),
    (Token::RClose, "r)"),
    (Token::Pad, "<pad>"),
];

impl Token {
    /// Stable vocabulary index.
    pub fn index(self) -> usize {
        match self {
            Token::Def => 0,
            Token::Run => 1,
            Token::MOpen => 2,
            Token::MClose => 3,
            Token::Act(a) => 4 + a.0 as usize,
            Token::While => 9,
            Token::Repeat => 10,
            Token::If => 11,
            Token::IfElse => 12,
            Token::Else => 13,
            Token::Not => 14,
            Token::COpen => 15,
            Token::CClose => 16,
            Token::WOpen => 17,
            Token::WClose => 18,
            Token::IOpen => 19,
            Token::IClose => 20,
            Token::EOpen => 21,
            Token::EClose => 22,
            Token::ROpen => 23,
            Token::RClose => 24,
            Token::Sense(s) => 25 + s as usize,
            Token::Count(n) => 30 + n as usize,
            Token::Pad => 50,
            Token::Start => 51,
            Token::End => 52,
        }
    }

    pub fn from_index(i: usize) -> Option<Token> {
        Some(match i {
            0 => Token::Def,
            1 => Token::Run,
            2 => Token::MOpen,
            3 => Token::MClose,
            4..=8 => Token::Act(ActionToken((i - 4) as u8)),
            9 => Token::While,
            10 => Token::Repeat,
            11 => Token::If,
            12 => Token::IfElse,
            13 => Token::Else,
            14 => Token::Not,
            15 => Token::COpen,
            16 => Token::CClose,
            17 => Token::WOpen,
            18 => Token::WClose,
            19 => Token::IOpen,
            20 => Token::IClose,
            21 => Token::EOpen,
            22 => Token::EClose,
            23 => Token::ROpen,
            24 => Token::RClose,
            25..=29 => Token::Sense(Sensor::ALL[i - 25]),
            30..=49 => Token::Count((i - 30) as u8),
            50 => Token::Pad,
            51 => Token::Start,
            52 => Token::End,
            _ => return None,
        })
    }

    pub fn text(self) -> String {
        match self {
            Token::Act(a) => a.action().name().to_string(),
            Token::Sense(s) => s.name().to_string(),
            Token::Count(n) => format!("R={n}"),
            Token::Start => "<s>".to_string(),
            Token::End => "</s>".to_string(),
            other => FIXED
                .iter()
                .find(|(t, _)| *t == other)
                .map(|(_, s)| s.to_string())
                .expect("every fixed token has a spelling"),
        }
    }

    pub fn from_text(s: &str) -> Option<Token> {
        if let Some((t, _)) = FIXED.iter().find(|(_, name)| *name == s) {
            return Some(*t);
        }
        if let Some(a) = Action::ALL.iter().find(|a| a.name() == s) {
            return Some(Token::from(*a));
        }
        if let Some(sensor) = Sensor::ALL.iter().find(|x| x.name() == s) {
            return Some(Token::Sense(*sensor));
        }
        if let Some(n) = s.strip_prefix("R=") {
            let n: u8 = n.parse().ok()?;
            return (n <= MAX_REPEAT && n.to_string() == s[2..]).then_some(Token::Count(n));
        }
        match s {
            "<s>" => Some(Token::Start),
            "</s>" => Some(Token::End),
            _ => None,
        }
    }

    /// Spellings of all tokens in index order.
    pub fn vocabulary() -> Vec<String> {
        (0..VOCAB_SIZE)
            .map(|i| Token::from_index(i).expect("index in range").text())
            .collect()
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

/// Splits program text on whitespace. Unknown words yield the index of the
/// first one as the error.
pub fn tokenize(text: &str) -> Result<Vec<Token>, (usize, String)> {
    text.split_whitespace()
        .enumerate()
        .map(|(i, w)| Token::from_text(w).ok_or_else(|| (i, w.to_string())))
        .collect()
}

/// Canonical program text: tokens joined by single spaces.
pub fn detokenize(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.text()).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_are_a_bijection() {
        for i in 0..VOCAB_SIZE {
            let t = Token::from_index(i).unwrap();
            assert_eq!(t.index(), i);
            assert_eq!(Token::from_text(&t.text()), Some(t));
        }
        assert_eq!(Token::from_index(VOCAB_SIZE), None);
    }

    #[test]
    fn vocabulary_spellings_are_unique() {
        let mut v = Token::vocabulary();
        assert_eq!(v.len(), 53);
        v.sort();
        v.dedup();
        assert_eq!(v.len(), 53);
    }

    #[test]
    fn repeat_literals() {
        assert_eq!(Token::from_text("R=19"), Some(Token::Count(19)));
        assert_eq!(Token::from_text("R=20"), None);
        assert_eq!(Token::from_text("R=02"), None);
    }
}
