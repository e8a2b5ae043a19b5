//! Program synthesis in a learned latent space: the Karel gridworld and DSL,
//! a program dataset generator, a program embedding model and a
//! cross-entropy search over its latent space.

pub mod datagen;
pub mod dsl;
pub mod error;
pub mod harness;
pub mod model;
pub mod nn;
pub mod rng;
pub mod search;
pub mod world;

pub use dsl::{parse, parse_text, print, Program, Token};
pub use error::{DataError, HarnessError, MaskError, ModelError, ParseError, WorldError};
pub use world::{Action, GridState, TaskKind, TaskSpec};
