use std::collections::HashMap;
use std::collections::VecDeque;
use std::fmt::Write as _;

use super::{expand, progress, Formula, LtlError};

pub const DEFAULT_STATE_BUDGET: usize = 1_000_000;
const MAX_ATOMS: usize = 16;

/// Complete DFA over letters `0..2^|AP|`. State 0 is initial; states whose
/// residual is `true` are accepting and absorbing.
#[derive(Debug, Clone, PartialEq)]
pub struct Dfa {
    ap: Vec<String>,
    num_letters: usize,
    trans: Vec<u32>,
    accepting: Vec<bool>,
    residuals: Vec<Formula>,
}

pub fn to_dfa(f: &Formula, ap: &[String]) -> Result<Dfa, LtlError> {
    to_dfa_with_budget(f, ap, DEFAULT_STATE_BUDGET)
}

/// Explores residuals of the expanded formula breadth-first, letters in
/// increasing order, so state numbering is deterministic.
pub fn to_dfa_with_budget(f: &Formula, ap: &[String], budget: usize) -> Result<Dfa, LtlError> {
    if ap.len() > MAX_ATOMS {
        return Err(LtlError::TooManyAtoms(ap.len()));
    }
    let num_letters = 1usize << ap.len();
    let start = expand(f);
    let mut index: HashMap<Formula, u32> = HashMap::new();
    let mut residuals = vec![start.clone()];
    index.insert(start, 0);
    let mut trans = Vec::new();
    let mut queue = VecDeque::from([0usize]);
    while let Some(z) = queue.pop_front() {
        debug_assert_eq!(trans.len(), z * num_letters);
        let cur = residuals[z].clone();
        for letter in 0..num_letters {
            let next = match cur {
                Formula::True | Formula::False => cur.clone(),
                _ => progress(&cur, letter as u32),
            };
            let id = match index.get(&next) {
                Some(&id) => id,
                None => {
                    if residuals.len() >= budget {
                        return Err(LtlError::StateBudget(budget));
                    }
                    let id = residuals.len() as u32;
                    index.insert(next.clone(), id);
                    residuals.push(next);
                    queue.push_back(id as usize);
                    id
                }
            };
            trans.push(id);
        }
    }
    Ok(Dfa {
        ap: ap.to_vec(),
        num_letters,
        trans,
        accepting: residuals.iter().map(|r| *r == Formula::True).collect(),
        residuals,
    })
}

impl Dfa {
    pub fn ap(&self) -> &[String] {
        &self.ap
    }

    pub fn num_states(&self) -> usize {
        self.residuals.len()
    }

    pub fn num_letters(&self) -> usize {
        self.num_letters
    }

    pub fn initial(&self) -> usize {
        0
    }

    pub fn step(&self, z: usize, letter: u32) -> usize {
        self.trans[z * self.num_letters + letter as usize] as usize
    }

    pub fn is_accepting(&self, z: usize) -> bool {
        self.accepting[z]
    }

    /// Whether `z` can never reach acceptance (residual `false`).
    pub fn is_rejecting_sink(&self, z: usize) -> bool {
        self.residuals[z] == Formula::False
    }

    pub fn residual(&self, z: usize) -> &Formula {
        &self.residuals[z]
    }

    /// Whether the run on `trace` visits an accepting state.
    pub fn accepts(&self, trace: &[u32]) -> bool {
        let mut z = self.initial();
        if self.accepting[z] {
            return true;
        }
        for &l in trace {
            z = self.step(z, l);
            if self.accepting[z] {
                return true;
            }
        }
        false
    }

    /// Debug dump: header, accepting states, then one `z letter z'` line per
    /// transition.
    pub fn to_adjacency(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "dfa states={} initial=0 ap={}",
            self.num_states(),
            self.ap.join(",")
        )
        .unwrap();
        let acc: Vec<String> = (0..self.num_states())
            .filter(|&z| self.accepting[z])
            .map(|z| z.to_string())
            .collect();
        writeln!(out, "accepting {}", acc.join(" ")).unwrap();
        for z in 0..self.num_states() {
            writeln!(out, "# {z}: {}", self.residuals[z].display(&self.ap)).unwrap();
            for l in 0..self.num_letters {
                writeln!(out, "{z} {l} {}", self.step(z, l as u32)).unwrap();
            }
        }
        out
    }
}
