//! Product of the IMDP with the violation DFA and the maximally permissive
//! shield computed by action removal with value-iteration restarts.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::abstraction::{Imdp, ImdpRow, FEASIBILITY_TOL};
use crate::io::{field, parse_key_values, require, FormatError};
use crate::ltl::Dfa;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_SWEEP_BUDGET: usize = 1_000_000;
/// Slack for the between-reset monotonicity check.
const MONOTONE_TOL: f64 = 1e-12;
const MAX_ACTIONS: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum ShieldError {
    #[error("threshold p must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("automaton propositions {dfa:?} differ from IMDP propositions {imdp:?}")]
    AlphabetMismatch { dfa: Vec<String>, imdp: Vec<String> },
    #[error("at most {MAX_ACTIONS} actions are supported, got {0}")]
    TooManyActions(usize),
    #[error("infeasible interval row: lower sum {lower}, upper sum {upper}")]
    Infeasible { lower: f64, upper: f64 },
    #[error("no convergence within {0} sweeps")]
    SweepBudget(usize),
    #[error("value at product state {state} decreased from {before} to {after}")]
    NonMonotone {
        state: usize,
        before: f64,
        after: f64,
    },
    #[error("shield does not match the model: {0}")]
    Mismatch(String),
}

/// Feasible distribution maximizing `Σ Δ·V` over one interval row: all lower
/// bounds first, then the remaining mass to targets in decreasing `V`
/// (ties by index) up to their upper bounds.
pub fn omax_adversary(bounds: &[(f64, f64)], values: &[f64]) -> Result<Vec<f64>, ShieldError> {
    let lower: f64 = bounds.iter().map(|b| b.0).sum();
    let upper: f64 = bounds.iter().map(|b| b.1).sum();
    if lower > 1.0 + FEASIBILITY_TOL || upper < 1.0 - FEASIBILITY_TOL {
        return Err(ShieldError::Infeasible { lower, upper });
    }
    let mut order: Vec<usize> = (0..bounds.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    let mut dist: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    let mut rest = 1.0 - lower;
    for i in order {
        if rest <= 0.0 {
            break;
        }
        let add = (bounds[i].1 - bounds[i].0).min(rest);
        dist[i] += add;
        rest -= add;
    }
    Ok(dist)
}

/// `IMDP × DFA` restricted to states reachable from `(q, z0)` for every `q`.
///
/// From `(q, z)` every action leads to DFA state `z' = δ(z, L(q))`, so the
/// first transition consumes the label of the starting cell. States with an
/// accepting `z` are absorbing.
#[derive(Debug, Clone)]
pub struct ProductImdp {
    imdp: Imdp,
    dfa: Dfa,
    states: Vec<(u32, u32)>,
    index: HashMap<(u32, u32), u32>,
    accepting: Vec<bool>,
    /// Successor DFA state, per product state.
    next_z: Vec<u32>,
    /// Product index of each explicit row entry, flattened over `(s, a)`.
    targets: Vec<u32>,
    target_offsets: Vec<usize>,
    /// `layer[z][q]` is the product index of `(q, z)` for layers that are
    /// entered with a nonzero default bound; such layers are complete.
    layers: HashMap<u32, Vec<u32>>,
}

pub fn build_product(imdp: &Imdp, dfa: &Dfa) -> Result<ProductImdp, ShieldError> {
    if dfa.ap() != imdp.ap() {
        return Err(ShieldError::AlphabetMismatch {
            dfa: dfa.ap().to_vec(),
            imdp: imdp.ap().to_vec(),
        });
    }
    if imdp.num_actions() > MAX_ACTIONS {
        return Err(ShieldError::TooManyActions(imdp.num_actions()));
    }
    let nq = imdp.num_states();
    let na = imdp.num_actions();
    let mut states: Vec<(u32, u32)> = Vec::new();
    let mut index: HashMap<(u32, u32), u32> = HashMap::new();
    let mut queue = VecDeque::new();
    let mut layers: HashMap<u32, Vec<u32>> = HashMap::new();

    let mut visit = |q: usize, z: usize, states: &mut Vec<(u32, u32)>, queue: &mut VecDeque<u32>| {
        let key = (q as u32, z as u32);
        if let Some(&i) = index.get(&key) {
            return i;
        }
        let i = states.len() as u32;
        states.push(key);
        index.insert(key, i);
        queue.push_back(i);
        i
    };

    let z0 = dfa.initial();
    for q in 0..nq {
        visit(q, z0, &mut states, &mut queue);
    }
    while let Some(s) = queue.pop_front() {
        let (q, z) = states[s as usize];
        if dfa.is_accepting(z as usize) {
            continue;
        }
        let z2 = dfa.step(z as usize, imdp.label(q as usize));
        for a in 0..na {
            let row = imdp.row(q as usize, a);
            if row.default_upper > 0.0 {
                if !layers.contains_key(&(z2 as u32)) {
                    let ids = (0..nq).map(|t| visit(t, z2, &mut states, &mut queue)).collect();
                    layers.insert(z2 as u32, ids);
                }
            } else {
                for &(t, _, _) in &row.entries {
                    visit(t, z2, &mut states, &mut queue);
                }
            }
        }
    }
    let accepting: Vec<bool> = states.iter().map(|&(_, z)| dfa.is_accepting(z as usize)).collect();
    let mut next_z = Vec::with_capacity(states.len());
    let mut targets = Vec::new();
    let mut target_offsets = Vec::with_capacity(states.len() * na + 1);
    target_offsets.push(0);
    for (s, &(q, z)) in states.iter().enumerate() {
        let z2 = if accepting[s] {
            z
        } else {
            dfa.step(z as usize, imdp.label(q as usize)) as u32
        };
        next_z.push(z2);
        for a in 0..na {
            if !accepting[s] {
                for &(t, _, _) in &imdp.row(q as usize, a).entries {
                    targets.push(index[&(t as u32, z2)]);
                }
            }
            target_offsets.push(targets.len());
        }
    }
    Ok(ProductImdp {
        imdp: imdp.clone(),
        dfa: dfa.clone(),
        states,
        index,
        accepting,
        next_z,
        targets,
        target_offsets,
        layers,
    })
}

/// Per-layer ordering of product states by decreasing value.
struct LayerOrder {
    /// Position of each IMDP state in the order.
    pos: Vec<u32>,
    /// Values in order.
    sorted: Vec<f64>,
    /// `prefix[k] = Σ sorted[..k]`.
    prefix: Vec<f64>,
}

impl ProductImdp {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.imdp.num_actions()
    }

    pub fn imdp(&self) -> &Imdp {
        &self.imdp
    }

    pub fn dfa(&self) -> &Dfa {
        &self.dfa
    }

    /// `(q, z)` of product state `s`.
    pub fn state(&self, s: usize) -> (usize, usize) {
        let (q, z) = self.states[s];
        (q as usize, z as usize)
    }

    pub fn index_of(&self, q: usize, z: usize) -> Option<usize> {
        self.index.get(&(q as u32, z as u32)).map(|&i| i as usize)
    }

    pub fn is_accepting(&self, s: usize) -> bool {
        self.accepting[s]
    }

    fn row(&self, s: usize, a: usize) -> &ImdpRow {
        let (q, _) = self.states[s];
        self.imdp.row(q as usize, a)
    }

    fn row_targets(&self, s: usize, a: usize) -> &[u32] {
        let k = s * self.num_actions() + a;
        &self.targets[self.target_offsets[k]..self.target_offsets[k + 1]]
    }

    /// All successors of `(s, a)` with their bounds, including every target
    /// that only carries the default upper bound. Accepting states loop with
    /// `[1, 1]`.
    pub fn successors(&self, s: usize, a: usize) -> Vec<(usize, f64, f64)> {
        if self.accepting[s] {
            return vec![(s, 1.0, 1.0)];
        }
        let row = self.row(s, a);
        let mut out: Vec<(usize, f64, f64)> = row
            .entries
            .iter()
            .zip(self.row_targets(s, a))
            .map(|(e, &t)| (t as usize, e.1, e.2))
            .collect();
        if row.default_upper > 0.0 {
            let layer = &self.layers[&self.next_z[s]];
            for (q, &t) in layer.iter().enumerate() {
                if row.entries.binary_search_by_key(&q, |e| e.0).is_err() {
                    out.push((t as usize, 0.0, row.default_upper));
                }
            }
        }
        out.sort_by_key(|e| e.0);
        out
    }

    /// `(lower, upper)` for the product transition `s →a→ t`.
    pub fn bounds(&self, s: usize, a: usize, t: usize) -> (f64, f64) {
        if self.accepting[s] {
            return if s == t { (1.0, 1.0) } else { (0.0, 0.0) };
        }
        let (qt, zt) = self.states[t];
        if zt != self.next_z[s] {
            return (0.0, 0.0);
        }
        self.row(s, a).bounds(qt as usize)
    }

    fn layer_orders(&self, v: &[f64]) -> HashMap<u32, LayerOrder> {
        self.layers
            .iter()
            .map(|(&z, members)| {
                let mut ord: Vec<u32> = (0..members.len() as u32).collect();
                ord.sort_by(|&i, &j| {
                    v[members[j as usize] as usize]
                        .total_cmp(&v[members[i as usize] as usize])
                        .then(i.cmp(&j))
                });
                let mut pos = vec![0u32; members.len()];
                for (k, &q) in ord.iter().enumerate() {
                    pos[q as usize] = k as u32;
                }
                let sorted: Vec<f64> = ord.iter().map(|&q| v[members[q as usize] as usize]).collect();
                let mut prefix = Vec::with_capacity(sorted.len() + 1);
                prefix.push(0.0);
                let mut acc = 0.0;
                for x in &sorted {
                    acc += x;
                    prefix.push(acc);
                }
                (z, LayerOrder { pos, sorted, prefix })
            })
            .collect()
    }

    /// Worst-case expected value of `v` after taking `a` in `s`.
    fn q_value(&self, s: usize, a: usize, v: &[f64], orders: &HashMap<u32, LayerOrder>) -> f64 {
        if self.accepting[s] {
            return v[s];
        }
        let row = self.row(s, a);
        let tg = self.row_targets(s, a);
        let mut rest = 1.0;
        let mut obj = 0.0;
        for (e, &t) in row.entries.iter().zip(tg) {
            rest -= e.1;
            obj += e.1 * v[t as usize];
        }
        let d = row.default_upper;
        if d <= 0.0 {
            let mut ord: Vec<usize> = (0..tg.len()).collect();
            ord.sort_by(|&i, &j| v[tg[j] as usize].total_cmp(&v[tg[i] as usize]).then(i.cmp(&j)));
            for i in ord {
                if rest <= 0.0 {
                    break;
                }
                let add = (row.entries[i].2 - row.entries[i].1).min(rest);
                obj += add * v[tg[i] as usize];
                rest -= add;
            }
            return obj.min(1.0);
        }

        let lo = &orders[&self.next_z[s]];
        let mut ord: Vec<usize> = (0..tg.len()).collect();
        ord.sort_by_key(|&i| lo.pos[row.entries[i].0]);
        let mut cursor = 0usize;
        let take_background = |from: usize, to: usize, rest: &mut f64, obj: &mut f64| {
            if from >= to || *rest <= 0.0 {
                return;
            }
            let count = to - from;
            if *rest >= d * count as f64 {
                *obj += d * (lo.prefix[to] - lo.prefix[from]);
                *rest -= d * count as f64;
            } else {
                let k = ((*rest / d).floor() as usize).min(count);
                *obj += d * (lo.prefix[from + k] - lo.prefix[from]);
                *rest -= d * k as f64;
                if k < count && *rest > 0.0 {
                    *obj += *rest * lo.sorted[from + k];
                    *rest = 0.0;
                }
            }
        };
        for i in ord {
            let p = lo.pos[row.entries[i].0] as usize;
            take_background(cursor, p, &mut rest, &mut obj);
            if rest > 0.0 {
                let add = (row.entries[i].2 - row.entries[i].1).min(rest);
                obj += add * v[tg[i] as usize];
                rest -= add;
            }
            cursor = p + 1;
        }
        take_background(cursor, lo.sorted.len(), &mut rest, &mut obj);
        obj.min(1.0)
    }

    /// `Q(s, a)` for every state and action, computed in parallel.
    fn q_values(&self, v: &[f64]) -> Vec<f64> {
        let na = self.num_actions();
        let orders = self.layer_orders(v);
        let mut q = vec![0.0; self.num_states() * na];
        q.par_chunks_mut(na).enumerate().for_each(|(s, out)| {
            for (a, o) in out.iter_mut().enumerate() {
                *o = self.q_value(s, a, v, &orders);
            }
        });
        q
    }

    /// Robust (o-max) reachability value of `F` under the given per-state
    /// action masks, by plain value iteration from `V⁰`.
    pub fn reach_value(&self, masks: &[u64], tol: f64, budget: usize) -> Result<Vec<f64>, ShieldError> {
        let na = self.num_actions();
        let mut v = self.initial_values();
        for _ in 0..budget {
            let q = self.q_values(&v);
            let next: Vec<f64> = (0..self.num_states())
                .map(|s| {
                    (0..na)
                        .filter(|&a| masks[s] >> a & 1 == 1)
                        .map(|a| q[s * na + a])
                        .fold(0.0, f64::max)
                })
                .collect();
            let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if diff < tol {
                return Ok(v);
            }
        }
        Err(ShieldError::SweepBudget(budget))
    }

    fn initial_values(&self) -> Vec<f64> {
        self.accepting.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect()
    }
}

/// Counters from one synthesis run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SynthesisStats {
    pub sweeps: usize,
    pub resets: usize,
}

/// Allowed actions and worst-case violation value per product state.
#[derive(Debug, Clone, PartialEq)]
pub struct Shield {
    p: f64,
    tol: f64,
    spec: String,
    ap: Vec<String>,
    imdp_states: usize,
    dfa_states: usize,
    num_actions: usize,
    /// `(q, z, allowed mask, V)` in product order.
    entries: Vec<(u32, u32, u64, f64)>,
    index: HashMap<(u32, u32), u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    pub p: f64,
    pub tol: f64,
    pub sweep_budget: usize,
}

impl SynthesisOptions {
    pub fn new(p: f64) -> Self {
        SynthesisOptions {
            p,
            tol: DEFAULT_TOL,
            sweep_budget: DEFAULT_SWEEP_BUDGET,
        }
    }
}

/// Iterative action removal. Each sweep computes `Q = Δ·V` under the o-max
/// adversary, keeps actions with `Q < p` (or the lowest-index minimizer when
/// none qualifies) and, if any action set changed, restarts from `V⁰`;
/// otherwise `V ← max_a Q` and the run stops once no value moves by `tol`.
/// Updates are synchronous, so the result does not depend on thread count.
pub fn synthesize(
    prod: &ProductImdp,
    spec: &str,
    opts: &SynthesisOptions,
) -> Result<(Shield, SynthesisStats), ShieldError> {
    if !(opts.p > 0.0 && opts.p <= 1.0) {
        return Err(ShieldError::InvalidThreshold(opts.p));
    }
    if !(opts.tol > 0.0) {
        return Err(ShieldError::InvalidTolerance(opts.tol));
    }
    let n = prod.num_states();
    let na = prod.num_actions();
    let full: u64 = if na == 64 { u64::MAX } else { (1u64 << na) - 1 };
    let mut masks = vec![full; n];
    let v0 = prod.initial_values();
    let mut v = v0.clone();
    let mut stats = SynthesisStats::default();
    loop {
        if stats.sweeps >= opts.sweep_budget {
            return Err(ShieldError::SweepBudget(opts.sweep_budget));
        }
        stats.sweeps += 1;
        let q = prod.q_values(&v);
        let mut changed = false;
        for s in 0..n {
            let qs = &q[s * na..(s + 1) * na];
            let mut keep = 0u64;
            let mut best: Option<usize> = None;
            for a in 0..na {
                if masks[s] >> a & 1 == 0 {
                    continue;
                }
                if qs[a] < opts.p {
                    keep |= 1 << a;
                }
                if best.map_or(true, |b| qs[a] < qs[b]) {
                    best = Some(a);
                }
            }
            if keep == 0 {
                keep = 1 << best.expect("action sets are never empty");
            }
            if keep != masks[s] {
                masks[s] = keep;
                changed = true;
            }
        }
        if changed {
            stats.resets += 1;
            v.clone_from(&v0);
            continue;
        }
        let mut diff = 0.0f64;
        for s in 0..n {
            let qs = &q[s * na..(s + 1) * na];
            let next = (0..na)
                .filter(|&a| masks[s] >> a & 1 == 1)
                .map(|a| qs[a])
                .fold(0.0, f64::max);
            if next < v[s] - MONOTONE_TOL {
                return Err(ShieldError::NonMonotone {
                    state: s,
                    before: v[s],
                    after: next,
                });
            }
            diff = diff.max((next - v[s]).abs());
            v[s] = next;
        }
        if diff < opts.tol {
            break;
        }
    }
    let entries: Vec<(u32, u32, u64, f64)> = prod
        .states
        .iter()
        .zip(masks.iter().zip(&v))
        .map(|(&(q, z), (&m, &val))| (q, z, m, val))
        .collect();
    Ok((
        Shield {
            p: opts.p,
            tol: opts.tol,
            spec: spec.to_string(),
            ap: prod.imdp.ap().to_vec(),
            imdp_states: prod.imdp.num_states(),
            dfa_states: prod.dfa.num_states(),
            num_actions: na,
            index: prod.index.clone(),
            entries,
        },
        stats,
    ))
}

impl Shield {
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn spec(&self) -> &str {
        &self.spec
    }

    pub fn ap(&self) -> &[String] {
        &self.ap
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn imdp_states(&self) -> usize {
        self.imdp_states
    }

    pub fn dfa_states(&self) -> usize {
        self.dfa_states
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(q, z, allowed mask, V)` of the `i`-th product state.
    pub fn entry(&self, i: usize) -> (usize, usize, u64, f64) {
        let (q, z, m, v) = self.entries[i];
        (q as usize, z as usize, m, v)
    }

    fn find(&self, q: usize, z: usize) -> Option<&(u32, u32, u64, f64)> {
        self.index
            .get(&(q as u32, z as u32))
            .map(|&i| &self.entries[i as usize])
    }

    /// Allowed-action bitmask at `(q, z)`, if that product state exists.
    pub fn allowed_mask(&self, q: usize, z: usize) -> Option<u64> {
        self.find(q, z).map(|e| e.2)
    }

    pub fn allowed(&self, q: usize, z: usize) -> Option<Vec<usize>> {
        self.allowed_mask(q, z)
            .map(|m| (0..self.num_actions).filter(|&a| m >> a & 1 == 1).collect())
    }

    pub fn value(&self, q: usize, z: usize) -> Option<f64> {
        self.find(q, z).map(|e| e.3)
    }

    /// Product states (as `(q, z)`) with `V < p`.
    pub fn safe_states(&self) -> Vec<(usize, usize)> {
        self.safe_states_at(self.p)
    }

    pub fn safe_states_at(&self, p: f64) -> Vec<(usize, usize)> {
        self.entries
            .iter()
            .filter(|e| e.3 < p)
            .map(|e| (e.0 as usize, e.1 as usize))
            .collect()
    }

    /// Checks that the shield was built for a model with these sizes.
    pub fn check_compatible(&self, imdp_states: usize, dfa: &Dfa, num_actions: usize) -> Result<(), ShieldError> {
        if self.imdp_states != imdp_states || self.num_actions != num_actions || self.ap != dfa.ap() || self.dfa_states != dfa.num_states() {
            return Err(ShieldError::Mismatch(format!(
                "shield has {} states, {} actions, {} automaton states; model has {}, {}, {}",
                self.imdp_states,
                self.num_actions,
                self.dfa_states,
                imdp_states,
                num_actions,
                dfa.num_states()
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "dshield-shield v1").unwrap();
        writeln!(
            out,
            "p={:?} tol={:?} imdp_states={} dfa_states={} actions={} ap={}",
            self.p,
            self.tol,
            self.imdp_states,
            self.dfa_states,
            self.num_actions,
            self.ap.join(",")
        )
        .unwrap();
        writeln!(out, "spec {}", self.spec).unwrap();
        for &(q, z, m, v) in &self.entries {
            let acts: Vec<String> = (0..self.num_actions)
                .filter(|&a| m >> a & 1 == 1)
                .map(|a| a.to_string())
                .collect();
            writeln!(out, "{q} {z} {} {v:?}", acts.join(",")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, FormatError> {
        let mut lines = text.lines().enumerate();
        let (_, magic) = lines.next().ok_or_else(|| FormatError::Missing("header".into()))?;
        if magic.trim() != "dshield-shield v1" {
            return Err(FormatError::Version(magic.trim().to_string()));
        }
        let (_, meta) = lines.next().ok_or_else(|| FormatError::Missing("parameters".into()))?;
        let kv = parse_key_values(meta)?;
        let p: f64 = require(&kv, "p")?;
        let tol: f64 = require(&kv, "tol")?;
        let imdp_states: usize = require(&kv, "imdp_states")?;
        let dfa_states: usize = require(&kv, "dfa_states")?;
        let num_actions: usize = require(&kv, "actions")?;
        if num_actions > MAX_ACTIONS {
            return Err(FormatError::Parse("too many actions".into()));
        }
        let ap_text: String = require(&kv, "ap")?;
        let ap: Vec<String> = ap_text.split(',').filter(|s| !s.is_empty()).map(String::from).collect();
        let (_, spec_line) = lines.next().ok_or_else(|| FormatError::Missing("spec".into()))?;
        let spec = spec_line
            .strip_prefix("spec ")
            .ok_or_else(|| FormatError::Missing("spec".into()))?
            .to_string();
        let mut entries = Vec::new();
        let mut index = HashMap::new();
        for (ln, line) in lines {
            let line_no = ln + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let q: u32 = field(&mut parts, line_no, "state")?;
            let z: u32 = field(&mut parts, line_no, "automaton state")?;
            let acts: String = field(&mut parts, line_no, "actions")?;
            let v: f64 = field(&mut parts, line_no, "value")?;
            let mut mask = 0u64;
            for a in acts.split(',') {
                let a: usize = a.parse().map_err(|_| FormatError::Line {
                    line: line_no,
                    msg: format!("bad action '{a}'"),
                })?;
                if a >= num_actions {
                    return Err(FormatError::Line {
                        line: line_no,
                        msg: format!("action {a} out of range"),
                    });
                }
                mask |= 1 << a;
            }
            if q as usize >= imdp_states || z as usize >= dfa_states {
                return Err(FormatError::Line {
                    line: line_no,
                    msg: "state out of range".into(),
                });
            }
            if index.insert((q, z), entries.len() as u32).is_some() {
                return Err(FormatError::Line {
                    line: line_no,
                    msg: "duplicate product state".into(),
                });
            }
            entries.push((q, z, mask, v));
        }
        Ok(Shield {
            p,
            tol,
            spec,
            ap,
            imdp_states,
            dfa_states,
            num_actions,
            entries,
            index,
        })
    }
}
