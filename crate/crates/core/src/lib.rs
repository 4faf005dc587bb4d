//! Shield synthesis for unknown stochastic switched systems from data.
//!
//! Pipeline: fit GP regressors per mode ([`gp`]), bound one-step reachable
//! sets ([`reach`]), abstract to an interval MDP ([`abstraction`]), turn a
//! safe LTL formula into a DFA ([`ltl`]) and compute the maximal permissive
//! shield on the product ([`shield`]). [`harness`] evaluates the result.

pub mod abstraction;
pub mod config;
pub mod error;
pub mod geometry;
pub mod gp;
pub mod harness;
pub mod interval;
pub mod io;
pub mod ltl;
pub mod reach;
pub mod shield;

pub use error::{Error, Result};
