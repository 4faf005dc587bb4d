use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dshield::abstraction::{build_imdp, Imdp};
use dshield::config::{run_pipeline, PipelineConfig};
use dshield::geometry::Label;
use dshield::gp::{Dataset, Regressor};
use dshield::harness::{
    sample_transitions, simulate_shielded, validate_containment, SimulationConfig, SystemModel,
};
use dshield::ltl::violation_dfa;
use dshield::shield::{build_product, synthesize, Shield, SynthesisOptions, DEFAULT_TOL};
use log::info;

#[derive(Parser)]
#[command(name = "dshield", version, about = "Data-driven IMDP abstraction and safety shields")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the selected step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one-step transitions from a built-in system.
    GenData(GenData),
    /// Fit one GP per mode and write the model as JSON.
    Fit(Fit),
    /// Build the interval MDP abstraction of a fitted model.
    Abstract(Abstract),
    /// Synthesize a shield for a safe LTL formula.
    Synthesize(Synth),
    /// Monte Carlo runs of the system with the shield in the loop.
    Simulate(Simulate),
    /// Check sampled transition frequencies against the IMDP bounds.
    Validate(Validate),
    /// Every step from a single config.
    Run(Run),
}

#[derive(Args)]
struct SystemArgs {
    /// Built-in system, used when no config is given.
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    noise_bound: Option<f64>,
}

#[derive(Args)]
struct GenData {
    #[command(flatten)]
    sys: SystemArgs,
    #[arg(long)]
    per_mode: Option<usize>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Fit {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct Abstract {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct Synth {
    #[arg(long)]
    imdp: PathBuf,
    /// Safe formula; taken from the config when omitted.
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the violation automaton as an adjacency list.
    #[arg(long)]
    dfa_out: Option<PathBuf>,
}

#[derive(Args)]
struct Simulate {
    #[command(flatten)]
    sys: SystemArgs,
    #[arg(long)]
    imdp: PathBuf,
    #[arg(long)]
    shield: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    trajectories: Option<usize>,
    /// Run the agent without the shield.
    #[arg(long)]
    bypass: bool,
    #[arg(long)]
    require_safe_start: bool,
    /// Comma-separated labels whose region entries are counted.
    #[arg(long, value_delimiter = ',')]
    visit: Vec<String>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Survival histogram as gnuplot columns.
    #[arg(long)]
    histogram: Option<PathBuf>,
}

#[derive(Args)]
struct Validate {
    #[command(flatten)]
    sys: SystemArgs,
    #[arg(long)]
    imdp: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Test every k-th cell.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 0.99)]
    min_fraction: f64,
}

#[derive(Args)]
struct Run {
    #[arg(long)]
    out_dir: PathBuf,
}

enum Failure {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl From<dshield::Error> for Failure {
    fn from(e: dshield::Error) -> Self {
        use dshield::Error as E;
        match e {
            E::Io(_) | E::Format(_) | E::Config(_) | E::Ltl(_) | E::Geometry(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_config(path: &Option<PathBuf>) -> Result<Option<PipelineConfig>, Failure> {
    match path {
        Some(p) => {
            if !p.exists() {
                return Err(Failure::Usage(format!("{}: no such file", p.display())));
            }
            Ok(Some(PipelineConfig::load(p)?))
        }
        None => Ok(None),
    }
}

fn need_config(cfg: Option<PipelineConfig>, cmd: &str) -> Result<PipelineConfig, Failure> {
    cfg.ok_or_else(|| Failure::Usage(format!("{cmd} needs --config")))
}

fn resolve_system(args: &SystemArgs, cfg: Option<&PipelineConfig>) -> Result<SystemModel, Failure> {
    let sys = match (&args.system, cfg) {
        (Some(name), _) => SystemModel::by_name(name)
            .ok_or_else(|| Failure::Usage(format!("unknown system '{name}'")))?,
        (None, Some(c)) => c.system()?,
        (None, None) => SystemModel::planar4(),
    };
    Ok(match args.noise_bound {
        Some(s) => sys.with_noise_bound(s),
        None => sys,
    })
}

fn load_imdp(path: &Path) -> Result<Imdp, Failure> {
    Imdp::from_text(&read(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn gen_data(a: GenData, cfg: Option<PipelineConfig>, seed: Option<u64>) -> Outcome {
    let sys = resolve_system(&a.sys, cfg.as_ref())?;
    let per_mode = a
        .per_mode
        .or(cfg.as_ref().map(|c| c.data.per_mode))
        .ok_or_else(|| Failure::Usage("gen-data needs --per-mode or --config".into()))?;
    let seed = seed.or(cfg.as_ref().map(|c| c.data.seed)).unwrap_or(0);
    let data = sample_transitions(&sys, per_mode, seed)?;
    info!("{} transitions from {}", data.len(), sys.name);
    match a.out {
        Some(p) => write(&p, &data.to_csv()),
        None => {
            print!("{}", data.to_csv());
            Ok(())
        }
    }
}

fn fit(a: Fit, cfg: Option<PipelineConfig>, seed: Option<u64>) -> Outcome {
    let cfg = need_config(cfg, "fit")?;
    let path = &a.data;
    let data = Dataset::from_csv(&read(path)?)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut fc = cfg.fit_config();
    if let Some(s) = seed {
        fc.seed = s;
    }
    let t = Instant::now();
    let reg = Regressor::fit(&data, &cfg.kernel()?, &fc).map_err(dshield::Error::from)?;
    info!("fit {} modes in {:.2?}", reg.num_actions(), t.elapsed());
    write(&a.out, &reg.to_json())
}

fn abstract_cmd(a: Abstract, cfg: Option<PipelineConfig>) -> Outcome {
    let cfg = need_config(cfg, "abstract")?;
    let path = &a.model;
    let reg = Regressor::from_json(&read(path)?)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let sys = cfg.system()?;
    let part = cfg.partition(&sys.domain)?;
    let noise = cfg.noise_cells(reg.noise_bound())?;
    let t = Instant::now();
    let imdp = build_imdp(&reg, &part, &noise, cfg.abstraction.delta, &cfg.reach_options())
        .map_err(dshield::Error::from)?;
    info!("{} states in {:.2?}", imdp.num_states(), t.elapsed());
    write(&a.out, &imdp.to_text())
}

fn synthesize_cmd(a: Synth, cfg: Option<PipelineConfig>) -> Outcome {
    let imdp = load_imdp(&a.imdp)?;
    let spec = a
        .spec
        .or(cfg.as_ref().map(|c| c.shield.spec.clone()))
        .ok_or_else(|| Failure::Usage("synthesize needs --spec or --config".into()))?;
    let p = a
        .p
        .or(cfg.as_ref().map(|c| c.shield.p))
        .ok_or_else(|| Failure::Usage("synthesize needs --p or --config".into()))?;
    let tol = a.tol.or(cfg.as_ref().map(|c| c.shield.tol)).unwrap_or(DEFAULT_TOL);
    let dfa = violation_dfa(&spec, imdp.ap()).map_err(|e| Failure::Usage(format!("spec: {e}")))?;
    let prod = build_product(&imdp, &dfa).map_err(dshield::Error::from)?;
    let t = Instant::now();
    let opts = SynthesisOptions { tol, ..SynthesisOptions::new(p) };
    let (shield, stats) = synthesize(&prod, &spec, &opts).map_err(|e| match e {
        dshield::shield::ShieldError::InvalidThreshold(_) | dshield::shield::ShieldError::InvalidTolerance(_) => {
            Failure::Usage(e.to_string())
        }
        _ => Failure::Runtime(e.to_string()),
    })?;
    info!(
        "{} product states, {} sweeps, {} resets, {:.2?}",
        prod.num_states(),
        stats.sweeps,
        stats.resets,
        t.elapsed()
    );
    let z0 = dfa.initial();
    let safe = (0..imdp.num_states())
        .filter(|&q| shield.value(q, z0).is_some_and(|v| v < p))
        .count();
    eprintln!("safe states {safe} of {}", imdp.num_states());
    if let Some(d) = &a.dfa_out {
        write(d, &dfa.to_adjacency())?;
    }
    write(&a.out, &shield.to_text())
}

fn labels_of(names: &[String], ap: &[String]) -> Result<Vec<Label>, Failure> {
    names
        .iter()
        .map(|n| {
            ap.iter()
                .position(|x| x == n)
                .map(|i| 1 << i)
                .ok_or_else(|| Failure::Usage(format!("unknown label '{n}'")))
        })
        .collect()
}

fn simulate_cmd(a: Simulate, cfg: Option<PipelineConfig>, seed: Option<u64>) -> Outcome {
    let sys = resolve_system(&a.sys, cfg.as_ref())?;
    let imdp = load_imdp(&a.imdp)?;
    let shield = Shield::from_text(&read(&a.shield)?)
        .map_err(|e| Failure::Usage(format!("{}: {e}", a.shield.display())))?;
    let part = imdp
        .partition()
        .ok_or_else(|| Failure::Usage("the IMDP file carries no partition".into()))?;
    let dfa = violation_dfa(shield.spec(), shield.ap()).map_err(dshield::Error::from)?;
    let sim = cfg.as_ref().and_then(|c| c.simulation.clone());
    let mut sc = SimulationConfig::new(
        a.steps.or(sim.as_ref().map(|s| s.steps)).unwrap_or(1000),
        a.trajectories.or(sim.as_ref().map(|s| s.trajectories)).unwrap_or(10_000),
        seed.or(sim.as_ref().map(|s| s.seed)).unwrap_or(0),
    );
    sc.bypass = a.bypass;
    sc.require_safe_start = a.require_safe_start;
    let visit = if a.visit.is_empty() {
        sim.map(|s| s.visit).unwrap_or_default()
    } else {
        a.visit
    };
    sc.visit_labels = labels_of(&visit, part.ap())?;
    let t = Instant::now();
    let report = simulate_shielded(&sys, part, &dfa, &shield, &sc)?;
    info!("{} trajectories in {:.2?}", report.trajectories, t.elapsed());
    match &a.report {
        Some(p) => write(p, &report.to_text())?,
        None => print!("{}", report.to_text()),
    }
    if let Some(h) = &a.histogram {
        write(h, &report.histogram_columns())?;
    }
    if !a.bypass {
        let p = shield.p();
        let n = report.trajectories.max(1) as f64;
        let slack = 3.0 * (p * (1.0 - p) / n).sqrt();
        if report.violation_rate > p + slack {
            return Err(Failure::Validation(format!(
                "violation rate {} exceeds p = {p}",
                report.violation_rate
            )));
        }
    }
    Ok(())
}

fn validate_cmd(a: Validate, cfg: Option<PipelineConfig>, seed: Option<u64>) -> Outcome {
    let sys = resolve_system(&a.sys, cfg.as_ref())?;
    let imdp = load_imdp(&a.imdp)?;
    let part = imdp
        .partition()
        .ok_or_else(|| Failure::Usage("the IMDP file carries no partition".into()))?;
    if a.stride == 0 {
        return Err(Failure::Usage("--stride must be positive".into()));
    }
    let cells: Vec<usize> = (0..part.num_cells()).step_by(a.stride).collect();
    let rep = validate_containment(&sys, &imdp, part, &cells, a.samples, seed.unwrap_or(0))?;
    println!("pairs {}", rep.pairs);
    println!("triples {}", rep.triples);
    println!("misses {}", rep.misses.len());
    println!("fraction_within {:?}", rep.fraction_within());
    for m in &rep.misses {
        println!(
            "miss q={} a={} q'={} freq={:?} window=[{:?}, {:?}]",
            m.state, m.action, m.target, m.frequency, m.lower, m.upper
        );
    }
    if rep.fraction_within() < a.min_fraction {
        return Err(Failure::Validation(format!(
            "{:.4} of triples inside their windows, need {}",
            rep.fraction_within(),
            a.min_fraction
        )));
    }
    Ok(())
}

fn run_cmd(a: Run, cfg: Option<PipelineConfig>, seed: Option<u64>) -> Outcome {
    let mut cfg = need_config(cfg, "run")?;
    if let Some(s) = seed {
        cfg.data.seed = s;
        cfg.gp.seed = s;
    }
    fs::create_dir_all(&a.out_dir).map_err(|e| Failure::Usage(format!("{}: {e}", a.out_dir.display())))?;
    let out = run_pipeline(&cfg)?;
    info!("timings {:?}", out.timings);
    let dir = &a.out_dir;
    write(&dir.join("data.csv"), &out.dataset.to_csv())?;
    write(&dir.join("model.json"), &out.regressor.to_json())?;
    write(&dir.join("model.imdp"), &out.imdp.to_text())?;
    write(&dir.join("model.shield"), &out.shield.to_text())?;
    let z0 = out.dfa.initial();
    let safe = (0..out.partition.num_states())
        .filter(|&q| out.shield.value(q, z0).is_some_and(|v| v < cfg.shield.p))
        .count();
    println!("safe_states {safe}");
    println!("sweeps {}", out.stats.sweeps);
    println!("resets {}", out.stats.resets);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let res = load_config(&cli.config).and_then(|cfg| match cli.cmd {
        Command::GenData(a) => gen_data(a, cfg, cli.seed),
        Command::Fit(a) => fit(a, cfg, cli.seed),
        Command::Abstract(a) => abstract_cmd(a, cfg),
        Command::Synthesize(a) => synthesize_cmd(a, cfg),
        Command::Simulate(a) => simulate_cmd(a, cfg, cli.seed),
        Command::Validate(a) => validate_cmd(a, cfg, cli.seed),
        Command::Run(a) => run_cmd(a, cfg, cli.seed),
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("dshield: validation failed: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("dshield: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("dshield: {m}");
            ExitCode::from(2)
        }
    }
}
