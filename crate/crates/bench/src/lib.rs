//! Fixtures shared by the benchmarks.

use dshield::abstraction::Imdp;
use dshield::geometry::{NoiseCells, Partition, Rect, Region};
use dshield::gp::{FitConfig, KernelSpec, PriorMean, Regressor};
use dshield::harness::{sample_transitions, SystemModel};
use dshield::reach::ReachOptions;

pub fn fit_config(budget: usize) -> FitConfig {
    FitConfig {
        noise_std: 0.05,
        budget,
        rkhs_bounds: vec![2.5, 2.5],
        gamma: None,
        prior_mean: PriorMean::Identity,
        seed: 7,
    }
}

pub fn kernel() -> KernelSpec {
    KernelSpec::squared_exponential(1.0, 2.0).unwrap()
}

/// planar4 model fitted on `per_mode` samples per mode.
pub fn regressor(per_mode: usize, budget: usize) -> Regressor {
    let data = sample_transitions(&SystemModel::planar4(), per_mode, 7).unwrap();
    Regressor::fit(&data, &kernel(), &fit_config(budget)).unwrap()
}

/// `k × k` grid over the planar4 domain with one obstacle.
pub fn partition(k: usize) -> Partition {
    let sys = SystemModel::planar4();
    let obstacle = Region {
        label: "b".into(),
        rect: Rect::new(vec![-0.4, -0.4], vec![0.4, 0.4]).unwrap(),
    };
    Partition::build(&sys.domain, &[k, k], &[obstacle], "b").unwrap()
}

pub fn noise() -> NoiseCells {
    NoiseCells::uniform(0.01, &[1, 1]).unwrap()
}

pub fn imdp(reg: &Regressor, k: usize) -> Imdp {
    dshield::abstraction::build_imdp(reg, &partition(k), &noise(), 1e-12, &ReachOptions::default()).unwrap()
}
