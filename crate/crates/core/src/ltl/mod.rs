//! Safe LTL: parsing, negation to the co-safe dual, bounded-operator
//! expansion and DFA construction by formula progression.

mod dfa;
mod formula;
mod parser;

pub use dfa::{to_dfa, to_dfa_with_budget, Dfa, DEFAULT_STATE_BUDGET};
pub use formula::{expand, negate, progress, Formula};
pub use parser::parse;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LtlError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("at {pos}: {msg} is not allowed in a safe formula")]
    Unsafe { pos: usize, msg: String },
    #[error("at {pos}: unknown proposition '{name}'")]
    UnknownAtom { pos: usize, name: String },
    #[error("automaton exceeded {0} states")]
    StateBudget(usize),
    #[error("at most 16 propositions are supported, got {0}")]
    TooManyAtoms(usize),
    #[error("proposition lists differ: {0:?} vs {1:?}")]
    AlphabetMismatch(Vec<String>, Vec<String>),
}

/// DFA accepting exactly the bad prefixes of the safe formula `text`.
pub fn violation_dfa(text: &str, ap: &[String]) -> Result<Dfa, LtlError> {
    to_dfa(&negate(&parse(text, ap)?), ap)
}
