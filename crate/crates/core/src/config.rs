//! TOML pipeline configuration and the end-to-end driver.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Deserialize;

use crate::abstraction::{build_imdp, Imdp};
use crate::error::{Error, Result};
use crate::geometry::{NoiseCells, Partition, Rect, Region};
use crate::gp::{Dataset, FeatureMap, FitConfig, KernelSpec, PriorMean, Regressor};
use crate::harness::{sample_transitions, SystemModel};
use crate::ltl::{violation_dfa, Dfa};
use crate::reach::{Enclosure, ReachOptions};
use crate::shield::{build_product, synthesize, Shield, SynthesisOptions, SynthesisStats};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    /// Overrides the built-in noise bound.
    pub noise_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub per_mode: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpSection {
    pub signal_variance: f64,
    pub lengthscale: f64,
    pub noise_std: f64,
    pub budget: usize,
    pub rkhs_bounds: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    #[serde(default)]
    pub prior_mean: PriorMean,
    /// Feature-map TOML file, relative to the config file.
    pub feature_map: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractionSection {
    pub grid: Vec<usize>,
    pub noise_cells: Vec<usize>,
    pub delta: f64,
    #[serde(default)]
    pub enclosure: Enclosure,
    #[serde(default = "one")]
    pub subdivisions: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    pub label: String,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShieldSection {
    pub spec: String,
    pub p: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    crate::shield::DEFAULT_TOL
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub steps: usize,
    pub trajectories: usize,
    pub seed: u64,
    /// Labels whose entries are counted per trajectory.
    #[serde(default)]
    pub visit: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub system: SystemSection,
    pub data: DataSection,
    pub gp: GpSection,
    pub abstraction: AbstractionSection,
    /// Proposition attached to the outside state.
    pub outside_label: String,
    #[serde(default)]
    pub regions: Vec<RegionSection>,
    pub shield: ShieldSection,
    pub simulation: Option<SimulationSection>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn system(&self) -> Result<SystemModel> {
        let sys = SystemModel::by_name(&self.system.name)
            .ok_or_else(|| Error::Config(format!("unknown system '{}'", self.system.name)))?;
        Ok(match self.system.noise_bound {
            Some(s) => sys.with_noise_bound(s),
            None => sys,
        })
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        let k = KernelSpec::squared_exponential(self.gp.signal_variance, self.gp.lengthscale)?;
        match &self.gp.feature_map {
            Some(p) => {
                let text = std::fs::read_to_string(self.base_dir.join(p))?;
                Ok(k.with_feature_map(FeatureMap::from_toml_str(&text)?)?)
            }
            None => Ok(k),
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            noise_std: self.gp.noise_std,
            budget: self.gp.budget,
            rkhs_bounds: self.gp.rkhs_bounds.clone(),
            gamma: self.gp.gamma.clone(),
            prior_mean: self.gp.prior_mean,
            seed: self.gp.seed,
        }
    }

    pub fn partition(&self, domain: &Rect) -> Result<Partition> {
        let regions = self
            .regions
            .iter()
            .map(|r| {
                Ok(Region {
                    label: r.label.clone(),
                    rect: Rect::new(r.lo.clone(), r.hi.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Partition::build(domain, &self.abstraction.grid, &regions, &self.outside_label)?)
    }

    pub fn noise_cells(&self, sigma: f64) -> Result<NoiseCells> {
        Ok(NoiseCells::uniform(sigma, &self.abstraction.noise_cells)?)
    }

    pub fn reach_options(&self) -> ReachOptions {
        ReachOptions {
            enclosure: self.abstraction.enclosure,
            subdivisions: self.abstraction.subdivisions,
        }
    }

    pub fn synthesis_options(&self) -> SynthesisOptions {
        SynthesisOptions {
            tol: self.shield.tol,
            ..SynthesisOptions::new(self.shield.p)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timings {
    pub data: Duration,
    pub fit: Duration,
    pub abstraction: Duration,
    pub synthesis: Duration,
}

/// Every intermediate artifact of one pipeline run.
#[derive(Debug)]
pub struct PipelineOutput {
    pub system: SystemModel,
    pub dataset: Dataset,
    pub regressor: Regressor,
    pub partition: Partition,
    pub imdp: Imdp,
    pub dfa: Dfa,
    pub shield: Shield,
    pub stats: SynthesisStats,
    pub timings: Timings,
}

/// Data generation, fit, abstraction and synthesis.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let system = cfg.system()?;
    let mut timings = Timings::default();

    let t = Instant::now();
    let dataset = sample_transitions(&system, cfg.data.per_mode, cfg.data.seed)?;
    timings.data = t.elapsed();

    let t = Instant::now();
    let regressor = Regressor::fit(&dataset, &cfg.kernel()?, &cfg.fit_config())?;
    timings.fit = t.elapsed();

    let t = Instant::now();
    let partition = cfg.partition(&system.domain)?;
    let noise = cfg.noise_cells(system.noise_bound)?;
    let imdp = build_imdp(
        &regressor,
        &partition,
        &noise,
        cfg.abstraction.delta,
        &cfg.reach_options(),
    )?;
    timings.abstraction = t.elapsed();

    let t = Instant::now();
    let dfa = violation_dfa(&cfg.shield.spec, partition.ap())?;
    let product = build_product(&imdp, &dfa)?;
    let (shield, stats) = synthesize(&product, &cfg.shield.spec, &cfg.synthesis_options())?;
    timings.synthesis = t.elapsed();

    Ok(PipelineOutput {
        system,
        dataset,
        regressor,
        partition,
        imdp,
        dfa,
        shield,
        stats,
        timings,
    })
}
