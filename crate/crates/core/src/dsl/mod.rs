//! The Karel program language: tokens, syntax tree, parser, interpreter and
//! the behavior-matching reward.

pub mod ast;
pub mod edit;
pub mod interp;
pub mod mask;
pub mod parser;
pub mod rmat;
pub mod token;

pub use ast::{print, Cond, Program, Stmt};
pub use edit::statement_edit_distance;
pub use interp::{
    branch_obligations, execute, execute_actions, Branch, BranchEvent, ExecLimits, Rollout, Termination,
};
pub use mask::{legal_tokens, mask_init, mask_step, MaskConfig, MaskState, TokenSet, MAX_CONSTRUCT_DEPTH, MAX_PROGRAM_TOKENS};
pub use parser::{parse, parse_text};
pub use rmat::{r_mat, r_mat_against, r_mat_traces, r_mat_with_limits, NoInitialStates};
pub use token::{detokenize, tokenize, Sensor, Token, DSL_VOCAB, MAX_REPEAT, VOCAB_SIZE};
