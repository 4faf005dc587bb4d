//! Interval MDP abstraction of the learned dynamics over a grid partition.
//!
//! For a source cell `q`, action `a` and noise cell `c`, let `Post(c)` be the
//! mean image of `q` shifted by `c` and `ε` the sup error bound over `q`. With
//! `ρ = (1 − δ)^n`, a target `q'` gets
//!
//! ```text
//! lower = Σ_c [Post(c) ⊆ q' eroded by ε] · ρ · P(c)
//! upper = Σ_c (1 − ρ·[Post(c) ∩ q' dilated by ε = ∅]) · P(c)
//! ```
//!
//! Every cell the dilated Posts miss still receives `upper = (1 − ρ)·ΣP(c)`,
//! so rows are stored sparsely with that value as a per-row default.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{CellShape, Label, NoiseCells, Partition, Rect};
use crate::gp::{GpError, Regressor};
use crate::io::{field, parse_key_values, require, FormatError};
use crate::reach::{region_bounds, ReachOptions};

/// Slack allowed when checking `Σ lower ≤ 1 ≤ Σ upper`.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum AbstractionError {
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("confidence parameter must lie in [0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("dimension mismatch: regressor has {regressor}, partition has {partition}")]
    Dimension { regressor: usize, partition: usize },
    #[error("state {state}, action {action}: infeasible row (lower sum {lower}, upper sum {upper})")]
    Infeasible {
        state: usize,
        action: usize,
        lower: f64,
        upper: f64,
    },
    #[error("state {state}, action {action}: invalid entry for target {target}: [{lo}, {hi}]")]
    InvalidEntry {
        state: usize,
        action: usize,
        target: usize,
        lo: f64,
        hi: f64,
    },
    #[error("malformed IMDP: {0}")]
    Malformed(String),
}

/// Target of a transition: a grid cell or the complement of the domain.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Cell(&'a CellShape),
    Outside(&'a Rect),
}

/// `1 − (1 − δ)^n`, accurate for tiny `δ`.
pub fn leak(delta: f64, n: usize) -> f64 {
    -((n as f64) * (-delta).ln_1p()).exp_m1()
}

/// Lower and upper probability of moving into `target`, given the Post box
/// of every noise cell (`posts[k]` pairs with `noise.cells()[k]`).
pub fn transition_bounds(
    posts: &[Rect],
    eps: &[f64],
    delta: f64,
    target: Target<'_>,
    noise: &NoiseCells,
) -> (f64, f64) {
    debug_assert_eq!(posts.len(), noise.len());
    let n = eps.len();
    let lk = leak(delta, n);
    let conf = 1.0 - lk;
    let mut lower = 0.0;
    let mut upper = 0.0;
    match target {
        Target::Cell(cell) => {
            let inner = cell.erode(eps);
            let outer = cell.dilate(eps);
            for (post, c) in posts.iter().zip(noise.cells()) {
                if inner.as_ref().is_some_and(|s| s.contains(post)) {
                    lower += conf * c.prob;
                }
                upper += if outer.intersects(post) { c.prob } else { lk * c.prob };
            }
        }
        Target::Outside(domain) => {
            // Eroding the complement of X is dilating X, and vice versa.
            let grown = domain.dilate(eps);
            let shrunk = domain.erode(eps);
            for (post, c) in posts.iter().zip(noise.cells()) {
                if !grown.intersects(post) {
                    lower += conf * c.prob;
                }
                let inside = shrunk.as_ref().is_some_and(|s| s.contains(post));
                upper += if inside { lk * c.prob } else { c.prob };
            }
        }
    }
    (lower, upper)
}

/// One `(q, a)` row: explicit `(target, lower, upper)` entries sorted by
/// target, and the upper bound shared by all other targets (their lower bound
/// is 0).
#[derive(Debug, Clone, PartialEq)]
pub struct ImdpRow {
    pub entries: Vec<(usize, f64, f64)>,
    pub default_upper: f64,
}

impl ImdpRow {
    pub fn new(mut entries: Vec<(usize, f64, f64)>, default_upper: f64) -> Self {
        entries.sort_by_key(|e| e.0);
        ImdpRow {
            entries,
            default_upper,
        }
    }

    /// Row with all mass on `target`.
    pub fn point_mass(target: usize) -> Self {
        ImdpRow {
            entries: vec![(target, 1.0, 1.0)],
            default_upper: 0.0,
        }
    }

    pub fn bounds(&self, target: usize) -> (f64, f64) {
        match self.entries.binary_search_by_key(&target, |e| e.0) {
            Ok(k) => (self.entries[k].1, self.entries[k].2),
            Err(_) => (0.0, self.default_upper),
        }
    }

    pub fn lower_sum(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn upper_sum(&self, num_states: usize) -> f64 {
        let listed: f64 = self.entries.iter().map(|e| e.2).sum();
        listed + self.default_upper * (num_states - self.entries.len()) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Imdp {
    num_states: usize,
    num_actions: usize,
    ap: Vec<String>,
    labels: Vec<Label>,
    rows: Vec<ImdpRow>,
    partition: Option<Partition>,
}

impl Imdp {
    /// Assembles an IMDP from rows indexed `q * num_actions + a`, checking
    /// every row.
    pub fn new(
        num_actions: usize,
        ap: Vec<String>,
        labels: Vec<Label>,
        rows: Vec<ImdpRow>,
    ) -> Result<Self, AbstractionError> {
        let num_states = labels.len();
        if num_actions == 0 || rows.len() != num_states * num_actions {
            return Err(AbstractionError::Malformed(format!(
                "{} rows for {num_states} states and {num_actions} actions",
                rows.len()
            )));
        }
        let imdp = Imdp {
            num_states,
            num_actions,
            ap,
            labels,
            rows,
            partition: None,
        };
        imdp.check()?;
        Ok(imdp)
    }

    pub fn with_partition(mut self, part: Partition) -> Result<Self, AbstractionError> {
        if part.num_states() != self.num_states || part.labels() != self.labels {
            return Err(AbstractionError::Malformed(
                "partition does not match IMDP states".into(),
            ));
        }
        self.partition = Some(part);
        Ok(self)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn ap(&self) -> &[String] {
        &self.ap
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, q: usize) -> Label {
        self.labels[q]
    }

    pub fn partition(&self) -> Option<&Partition> {
        self.partition.as_ref()
    }

    pub fn row(&self, q: usize, a: usize) -> &ImdpRow {
        &self.rows[q * self.num_actions + a]
    }

    pub fn lower(&self, q: usize, a: usize, t: usize) -> f64 {
        self.row(q, a).bounds(t).0
    }

    pub fn upper(&self, q: usize, a: usize, t: usize) -> f64 {
        self.row(q, a).bounds(t).1
    }

    /// Validates entries and `Σ lower ≤ 1 ≤ Σ upper` for every row.
    pub fn check(&self) -> Result<(), AbstractionError> {
        for q in 0..self.num_states {
            for a in 0..self.num_actions {
                let row = self.row(q, a);
                if !(0.0..=1.0).contains(&row.default_upper) {
                    return Err(AbstractionError::Malformed(format!(
                        "state {q}, action {a}: default upper {}",
                        row.default_upper
                    )));
                }
                let mut prev = None;
                for &(t, lo, hi) in &row.entries {
                    let ordered = prev.map_or(true, |p| p < t);
                    if t >= self.num_states || !ordered || !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                        return Err(AbstractionError::InvalidEntry {
                            state: q,
                            action: a,
                            target: t,
                            lo,
                            hi,
                        });
                    }
                    prev = Some(t);
                }
                let lower = row.lower_sum();
                let upper = row.upper_sum(self.num_states);
                if lower > 1.0 + FEASIBILITY_TOL || upper < 1.0 - FEASIBILITY_TOL {
                    return Err(AbstractionError::Infeasible {
                        state: q,
                        action: a,
                        lower,
                        upper,
                    });
                }
            }
        }
        Ok(())
    }

    /// Text form: a header, then `d q a default` and `t q a q' lower upper`
    /// lines in row order. Floats are written in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "dshield-imdp v1").unwrap();
        writeln!(
            out,
            "states={} actions={} ap={}",
            self.num_states,
            self.num_actions,
            self.ap.join(",")
        )
        .unwrap();
        let labels: Vec<String> = self.labels.iter().map(|l| l.to_string()).collect();
        writeln!(out, "labels {}", labels.join(" ")).unwrap();
        if let Some(p) = &self.partition {
            writeln!(out, "partition {}", p.to_json()).unwrap();
        }
        for q in 0..self.num_states {
            for a in 0..self.num_actions {
                let row = self.row(q, a);
                writeln!(out, "d {q} {a} {:?}", row.default_upper).unwrap();
                for &(t, lo, hi) in &row.entries {
                    writeln!(out, "t {q} {a} {t} {lo:?} {hi:?}").unwrap();
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, FormatError> {
        let mut lines = text.lines().enumerate();
        let (_, magic) = lines.next().ok_or_else(|| FormatError::Missing("header".into()))?;
        if magic.trim() != "dshield-imdp v1" {
            return Err(FormatError::Version(magic.trim().to_string()));
        }
        let (_, meta) = lines.next().ok_or_else(|| FormatError::Missing("sizes".into()))?;
        let kv = parse_key_values(meta)?;
        let num_states: usize = require(&kv, "states")?;
        let num_actions: usize = require(&kv, "actions")?;
        let ap_text: String = require(&kv, "ap")?;
        let ap: Vec<String> = ap_text.split(',').filter(|s| !s.is_empty()).map(String::from).collect();

        let mut labels = None;
        let mut partition = None;
        let mut defaults: Vec<Option<f64>> = vec![None; num_states * num_actions];
        let mut entries: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); num_states * num_actions];
        for (ln, line) in lines {
            let line_no = ln + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (tag, rest) = line.split_once(' ').unwrap_or((line, ""));
            match tag {
                "labels" => {
                    let l: Result<Vec<Label>, _> = rest.split_whitespace().map(str::parse).collect();
                    labels = Some(l.map_err(|_| FormatError::Line {
                        line: line_no,
                        msg: "bad label".into(),
                    })?);
                }
                "partition" => {
                    partition = Some(Partition::from_json(rest).map_err(|e| FormatError::Line {
                        line: line_no,
                        msg: e.to_string(),
                    })?);
                }
                "d" | "t" => {
                    let mut parts = rest.split_whitespace();
                    let q: usize = field(&mut parts, line_no, "state")?;
                    let a: usize = field(&mut parts, line_no, "action")?;
                    if q >= num_states || a >= num_actions {
                        return Err(FormatError::Line {
                            line: line_no,
                            msg: "state or action out of range".into(),
                        });
                    }
                    let idx = q * num_actions + a;
                    if tag == "d" {
                        defaults[idx] = Some(field(&mut parts, line_no, "default")?);
                    } else {
                        let t: usize = field(&mut parts, line_no, "target")?;
                        let lo: f64 = field(&mut parts, line_no, "lower")?;
                        let hi: f64 = field(&mut parts, line_no, "upper")?;
                        entries[idx].push((t, lo, hi));
                    }
                }
                other => {
                    return Err(FormatError::Line {
                        line: line_no,
                        msg: format!("unknown record '{other}'"),
                    })
                }
            }
        }
        let labels = labels.ok_or_else(|| FormatError::Missing("labels".into()))?;
        if labels.len() != num_states {
            return Err(FormatError::Parse("label count mismatch".into()));
        }
        let rows: Result<Vec<ImdpRow>, FormatError> = defaults
            .into_iter()
            .zip(entries)
            .enumerate()
            .map(|(idx, (d, e))| {
                let d = d.ok_or_else(|| {
                    FormatError::Missing(format!(
                        "default for state {} action {}",
                        idx / num_actions,
                        idx % num_actions
                    ))
                })?;
                Ok(ImdpRow::new(e, d))
            })
            .collect();
        let imdp = Imdp::new(num_actions, ap, labels, rows?)
            .map_err(|e| FormatError::Parse(e.to_string()))?;
        match partition {
            Some(p) => imdp
                .with_partition(p)
                .map_err(|e| FormatError::Parse(e.to_string())),
            None => Ok(imdp),
        }
    }
}

/// Row for source cell `q` under action `a`.
pub fn cell_row(
    reg: &Regressor,
    part: &Partition,
    noise: &NoiseCells,
    delta: f64,
    opts: &ReachOptions,
    q: usize,
    a: usize,
) -> Result<ImdpRow, AbstractionError> {
    let n = part.dim();
    // δ = 0 is allowed here for hand-built checks; region bounds need δ > 0,
    // so the error term is then taken as zero.
    let rect = part.cell(q);
    let (mean, eps) = if delta > 0.0 {
        let rb = region_bounds(reg, a, &rect, delta, opts)?;
        (rb.mean, rb.error)
    } else {
        (crate::reach::mean_bounds(reg, a, &rect, opts)?, vec![0.0; n])
    };
    let mean_box = Rect::from_intervals(&mean);
    let posts: Vec<Rect> = noise
        .cells()
        .iter()
        .map(|c| mean_box.minkowski_sum(&c.rect))
        .collect();
    Ok(row_from_posts(part, noise, &posts, &eps, delta))
}

/// Sparse row for the given Post boxes.
pub fn row_from_posts(
    part: &Partition,
    noise: &NoiseCells,
    posts: &[Rect],
    eps: &[f64],
    delta: f64,
) -> ImdpRow {
    let lk = leak(delta, eps.len());
    let default_upper: f64 = noise.cells().iter().map(|c| lk * c.prob).sum();
    let reach = posts
        .iter()
        .map(|p| p.dilate(eps))
        .reduce(|a, b| a.hull(&b))
        .expect("at least one noise cell");
    let mut entries = Vec::new();
    part.for_each_cell_in(&part.cell_ranges(&reach), |t| {
        let shape = part.cell_shape(t);
        let (lo, hi) = transition_bounds(posts, eps, delta, Target::Cell(&shape), noise);
        if lo != 0.0 || hi != default_upper {
            entries.push((t, lo, hi));
        }
    });
    let (lo, hi) = transition_bounds(posts, eps, delta, Target::Outside(part.domain()), noise);
    entries.push((part.outside(), lo, hi));
    ImdpRow::new(entries, default_upper)
}

/// Builds the IMDP over every cell and action. The outside state is absorbing.
pub fn build_imdp(
    reg: &Regressor,
    part: &Partition,
    noise: &NoiseCells,
    delta: f64,
    opts: &ReachOptions,
) -> Result<Imdp, AbstractionError> {
    if !(0.0..1.0).contains(&delta) {
        return Err(AbstractionError::InvalidDelta(delta));
    }
    if reg.dim() != part.dim() {
        return Err(AbstractionError::Dimension {
            regressor: reg.dim(),
            partition: part.dim(),
        });
    }
    let na = reg.num_actions();
    let cells: Result<Vec<Vec<ImdpRow>>, AbstractionError> = (0..part.num_cells())
        .into_par_iter()
        .map(|q| {
            (0..na)
                .map(|a| cell_row(reg, part, noise, delta, opts, q, a))
                .collect()
        })
        .collect();
    let mut rows: Vec<ImdpRow> = cells?.into_iter().flatten().collect();
    rows.extend((0..na).map(|_| ImdpRow::point_mass(part.outside())));
    let imdp = Imdp::new(na, part.ap().to_vec(), part.labels(), rows)?;
    imdp.with_partition(part.clone())
}
