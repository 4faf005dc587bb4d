//! Benchmark dynamics, data generation and Monte Carlo evaluation of shields.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::abstraction::Imdp;
use crate::error::{Error, Result};
use crate::geometry::{Label, Partition, Rect};
use crate::gp::{ActionSamples, Dataset};
use crate::ltl::Dfa;
use crate::shield::Shield;

/// Deterministic part of the dynamics: writes `f(x, a)` into `out`.
pub type Dynamics = fn(&[f64], usize, &mut [f64]);

/// Switched system `x⁺ = f(x, a) + v` with `v` uniform on `[-σ_v, σ_v]^n`.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub name: String,
    pub dim: usize,
    pub num_modes: usize,
    pub dynamics: Dynamics,
    pub noise_bound: f64,
    pub domain: Rect,
}

fn planar4_dynamics(x: &[f64], a: usize, out: &mut [f64]) {
    let (x0, x1) = (x[0], x[1]);
    let (y0, y1) = match a {
        0 => (x0 + 0.5 + 0.2 * x1.sin(), x1 + 0.4 * x0.cos()),
        1 => (x0 - 0.5 + 0.2 * x1.sin(), x1 + 0.4 * x0.cos()),
        2 => (x0 + 0.4 * x1.cos(), x1 + 0.5 + 0.2 * x0.sin()),
        3 => (x0 + 0.4 * x1.cos(), x1 - 0.5 + 0.2 * x0.sin()),
        _ => panic!("planar4 has 4 modes, got {a}"),
    };
    out[0] = y0;
    out[1] = y1;
}

impl SystemModel {
    /// Four directional modes on `[-2, 2]²` with `σ_v = 0.01`.
    pub fn planar4() -> Self {
        SystemModel {
            name: "planar4".into(),
            dim: 2,
            num_modes: 4,
            dynamics: planar4_dynamics,
            noise_bound: 0.01,
            domain: Rect::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "planar4" => Some(Self::planar4()),
            _ => None,
        }
    }

    pub fn with_noise_bound(mut self, sigma: f64) -> Self {
        self.noise_bound = sigma;
        self
    }

    pub fn mean_step(&self, x: &[f64], a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.dynamics)(x, a, &mut out);
        out
    }

    pub fn step<R: Rng>(&self, x: &[f64], a: usize, rng: &mut R) -> Vec<f64> {
        let mut out = self.mean_step(x, a);
        if self.noise_bound > 0.0 {
            for v in &mut out {
                *v += rng.gen_range(-self.noise_bound..=self.noise_bound);
            }
        }
        out
    }
}

fn uniform_in<R: Rng>(b: &Rect, rng: &mut R) -> Vec<f64> {
    (0..b.dim())
        .map(|i| {
            let (lo, hi) = (b.lo()[i], b.hi()[i]);
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        })
        .collect()
}

/// `per_mode` transitions per mode from states uniform over the domain.
pub fn sample_transitions(sys: &SystemModel, per_mode: usize, seed: u64) -> Result<Dataset> {
    if per_mode == 0 {
        return Err(Error::Config("per_mode must be at least 1".into()));
    }
    let actions = (0..sys.num_modes)
        .map(|a| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(a as u64);
            let mut s = ActionSamples::default();
            for _ in 0..per_mode {
                let x = uniform_in(&sys.domain, &mut rng);
                let y = sys.step(&x, a, &mut rng);
                s.inputs.push(x);
                s.outputs.push(y);
            }
            s
        })
        .collect();
    Ok(Dataset::new(sys.dim, sys.noise_bound, actions)?)
}

/// Stand-in for a learning agent proposing actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agent {
    UniformRandom,
    Constant(usize),
}

impl Agent {
    fn propose<R: Rng>(&self, rng: &mut R, num_actions: usize) -> usize {
        match *self {
            Agent::UniformRandom => rng.gen_range(0..num_actions),
            Agent::Constant(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartMode {
    /// Uniform over cells `q` with `V(q, z0) < p`, then uniform in the cell.
    SafeCells,
    /// Uniform over the whole domain.
    Domain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub steps: usize,
    pub trajectories: usize,
    pub seed: u64,
    pub agent: Agent,
    /// Run the agent without the shield.
    pub bypass: bool,
    pub start: StartMode,
    /// Fail when a start state is not in the safe set.
    pub require_safe_start: bool,
    /// Labels whose region entries are counted per trajectory.
    pub visit_labels: Vec<Label>,
    pub histogram_bins: usize,
    /// Trajectories whose full trace is kept in the report.
    pub record_traces: usize,
}

impl SimulationConfig {
    pub fn new(steps: usize, trajectories: usize, seed: u64) -> Self {
        SimulationConfig {
            steps,
            trajectories,
            seed,
            agent: Agent::UniformRandom,
            bypass: false,
            start: StartMode::SafeCells,
            require_safe_start: false,
            visit_labels: Vec::new(),
            histogram_bins: 20,
            record_traces: 0,
        }
    }
}

/// Cells, automaton states and applied actions of one trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub cells: Vec<usize>,
    /// Automaton state before reading the label of `cells[t]`.
    pub dfa_states: Vec<usize>,
    pub proposed: Vec<usize>,
    pub applied: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub trajectories: usize,
    pub steps: usize,
    pub violations: usize,
    pub violation_rate: f64,
    pub interventions: u64,
    /// Interventions at each time step, summed over trajectories.
    pub interventions_by_step: Vec<u64>,
    /// Decisions taken in product states missing from the shield.
    pub unknown_states: u64,
    /// Violation times, binned over `[0, steps]`.
    pub survival_histogram: Vec<u64>,
    /// Region entries per trajectory, one column per tracked label.
    pub visits: Vec<Vec<u32>>,
    pub traces: Vec<Trace>,
}

impl RunReport {
    /// Trajectories that entered every tracked region at least `k` times.
    pub fn trajectories_visiting_all(&self, k: u32) -> usize {
        self.visits
            .iter()
            .filter(|v| !v.is_empty() && v.iter().all(|&c| c >= k))
            .count()
    }

    /// Per-step intervention rate.
    pub fn intervention_rate(&self) -> f64 {
        let decisions: u64 = self.interventions_by_step.len() as u64 * self.trajectories as u64;
        if decisions == 0 {
            0.0
        } else {
            self.interventions as f64 / decisions as f64
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "trajectories {}", self.trajectories).unwrap();
        writeln!(out, "steps {}", self.steps).unwrap();
        writeln!(out, "violations {}", self.violations).unwrap();
        writeln!(out, "violation_rate {:?}", self.violation_rate).unwrap();
        writeln!(out, "interventions {}", self.interventions).unwrap();
        writeln!(out, "intervention_rate {:?}", self.intervention_rate()).unwrap();
        writeln!(out, "unknown_states {}", self.unknown_states).unwrap();
        if let Some(k) = self.visits.first().map(|v| v.len()).filter(|&k| k > 0) {
            let best: Vec<String> = (0..k)
                .map(|j| self.visits.iter().map(|v| v[j]).max().unwrap_or(0).to_string())
                .collect();
            writeln!(out, "max_visits {}", best.join(" ")).unwrap();
        }
        out
    }

    /// Two columns, bin start and count, for plotting survival times.
    pub fn histogram_columns(&self) -> String {
        let bins = self.survival_histogram.len().max(1);
        let width = (self.steps + 1) as f64 / bins as f64;
        let mut out = String::from("# bin_start violations\n");
        for (i, c) in self.survival_histogram.iter().enumerate() {
            writeln!(out, "{} {}", i as f64 * width, c).unwrap();
        }
        out
    }
}

struct TrajOutcome {
    violated_at: Option<usize>,
    interventions: Vec<u32>,
    unknown: u64,
    visits: Vec<u32>,
    trace: Option<Trace>,
}

/// Monte Carlo rollouts of `sys` with the shield filtering the agent's
/// proposals. A trajectory violates when the automaton accepts. The outside
/// state is absorbing: once the state leaves the domain it is not stepped
/// further.
pub fn simulate_shielded(
    sys: &SystemModel,
    part: &Partition,
    dfa: &Dfa,
    shield: &Shield,
    cfg: &SimulationConfig,
) -> Result<RunReport> {
    shield.check_compatible(part.num_states(), dfa, sys.num_modes)?;
    if part.ap() != dfa.ap() {
        return Err(Error::Simulation("partition and automaton propositions differ".into()));
    }
    let z0 = dfa.initial();
    let starts: Vec<usize> = (0..part.num_cells())
        .filter(|&q| shield.value(q, z0).is_some_and(|v| v < shield.p()))
        .collect();
    if cfg.start == StartMode::SafeCells && starts.is_empty() {
        return Err(Error::Simulation("the safe set contains no cell".into()));
    }
    let na = sys.num_modes;
    let outcomes: Vec<Result<TrajOutcome>> = (0..cfg.trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let mut x = match cfg.start {
                StartMode::SafeCells => {
                    let q = starts[rng.gen_range(0..starts.len())];
                    uniform_in(&part.cell(q), &mut rng)
                }
                StartMode::Domain => uniform_in(part.domain(), &mut rng),
            };
            if cfg.require_safe_start {
                let q = part.locate(&x);
                if !shield.value(q, z0).is_some_and(|v| v < shield.p()) {
                    return Err(Error::Simulation(format!(
                        "trajectory {i} starts in cell {q}, outside the safe set"
                    )));
                }
            }
            let mut z = z0;
            let mut out = TrajOutcome {
                violated_at: None,
                interventions: vec![0; cfg.steps + 1],
                unknown: 0,
                visits: vec![0; cfg.visit_labels.len()],
                trace: (i < cfg.record_traces).then(Trace::default),
            };
            let mut prev_label: Label = 0;
            for t in 0..=cfg.steps {
                let q = part.locate(&x);
                let label = part.label(q);
                for (k, &l) in cfg.visit_labels.iter().enumerate() {
                    if label & l != 0 && (t == 0 || prev_label & l == 0) {
                        out.visits[k] += 1;
                    }
                }
                prev_label = label;
                let proposed = cfg.agent.propose(&mut rng, na);
                let applied = if cfg.bypass {
                    proposed
                } else {
                    match shield.allowed_mask(q, z) {
                        Some(m) if m >> proposed & 1 == 1 => proposed,
                        Some(m) => {
                            out.interventions[t] += 1;
                            let k = rng.gen_range(0..m.count_ones());
                            (0..na).filter(|&a| m >> a & 1 == 1).nth(k as usize).unwrap()
                        }
                        None => {
                            out.unknown += 1;
                            proposed
                        }
                    }
                };
                if let Some(tr) = out.trace.as_mut() {
                    tr.cells.push(q);
                    tr.dfa_states.push(z);
                    tr.proposed.push(proposed);
                    tr.applied.push(applied);
                }
                z = dfa.step(z, label);
                if dfa.is_accepting(z) {
                    out.violated_at = Some(t);
                    break;
                }
                if t < cfg.steps && q != part.outside() {
                    x = sys.step(&x, applied, &mut rng);
                }
            }
            Ok(out)
        })
        .collect();

    let bins = cfg.histogram_bins.max(1);
    let mut report = RunReport {
        trajectories: cfg.trajectories,
        steps: cfg.steps,
        violations: 0,
        violation_rate: 0.0,
        interventions: 0,
        interventions_by_step: vec![0; cfg.steps + 1],
        unknown_states: 0,
        survival_histogram: vec![0; bins],
        visits: Vec::with_capacity(cfg.trajectories),
        traces: Vec::new(),
    };
    for o in outcomes {
        let o = o?;
        if let Some(t) = o.violated_at {
            report.violations += 1;
            let b = (t * bins / (cfg.steps + 1)).min(bins - 1);
            report.survival_histogram[b] += 1;
        }
        for (acc, &c) in report.interventions_by_step.iter_mut().zip(&o.interventions) {
            *acc += c as u64;
            report.interventions += c as u64;
        }
        report.unknown_states += o.unknown;
        report.visits.push(o.visits);
        if let Some(tr) = o.trace {
            report.traces.push(tr);
        }
    }
    report.violation_rate = if cfg.trajectories == 0 {
        0.0
    } else {
        report.violations as f64 / cfg.trajectories as f64
    };
    Ok(report)
}

/// One `(q, a, q')` triple whose empirical frequency fell outside its window.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentMiss {
    pub state: usize,
    pub action: usize,
    pub target: usize,
    pub frequency: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentReport {
    pub pairs: usize,
    pub triples: usize,
    pub misses: Vec<ContainmentMiss>,
}

impl ContainmentReport {
    pub fn fraction_within(&self) -> f64 {
        if self.triples == 0 {
            1.0
        } else {
            1.0 - self.misses.len() as f64 / self.triples as f64
        }
    }
}

/// Samples one-step transitions from every listed cell and action and checks
/// the empirical frequency of each target against
/// `[P̌ − 3·se(P̌), P̂ + 3·se(P̂)]` with `se(p) = sqrt(p(1 − p)/N)`. Targets are
/// the explicit row entries plus every target actually observed.
pub fn validate_containment(
    sys: &SystemModel,
    imdp: &Imdp,
    part: &Partition,
    cells: &[usize],
    samples_per_pair: usize,
    seed: u64,
) -> Result<ContainmentReport> {
    if samples_per_pair < 100 {
        return Err(Error::Config("samples_per_pair must be at least 100".into()));
    }
    if imdp.num_states() != part.num_states() || imdp.num_actions() != sys.num_modes {
        return Err(Error::Simulation("IMDP does not match the partition".into()));
    }
    let na = sys.num_modes;
    let n = samples_per_pair as f64;
    let per_pair: Vec<(usize, Vec<ContainmentMiss>)> = cells
        .par_iter()
        .flat_map_iter(|&q| (0..na).map(move |a| (q, a)))
        .map(|(q, a)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((q * na + a) as u64);
            let cell = part.cell(q);
            let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
            for _ in 0..samples_per_pair {
                let x = uniform_in(&cell, &mut rng);
                let y = sys.step(&x, a, &mut rng);
                *counts.entry(part.locate(&y)).or_default() += 1;
            }
            let row = imdp.row(q, a);
            let mut targets: Vec<usize> = row.entries.iter().map(|e| e.0).collect();
            targets.extend(counts.keys().copied());
            targets.sort_unstable();
            targets.dedup();
            let mut misses = Vec::new();
            for &t in &targets {
                let (lo, hi) = row.bounds(t);
                let f = counts.get(&t).copied().unwrap_or(0) as f64 / n;
                let se = |p: f64| (p * (1.0 - p) / n).max(0.0).sqrt();
                if f < lo - 3.0 * se(lo) || f > hi + 3.0 * se(hi) {
                    misses.push(ContainmentMiss {
                        state: q,
                        action: a,
                        target: t,
                        frequency: f,
                        lower: lo,
                        upper: hi,
                    });
                }
            }
            (targets.len(), misses)
        })
        .collect();
    let mut report = ContainmentReport {
        pairs: per_pair.len(),
        triples: 0,
        misses: Vec::new(),
    };
    for (t, m) in per_pair {
        report.triples += t;
        report.misses.extend(m);
    }
    Ok(report)
}
