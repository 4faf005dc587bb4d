//! Enclosures of the learned mean image and of the regression error over a
//! box.
//!
//! Two enclosure modes are provided. `Interval` pushes kernel ranges through
//! the posterior formulas with plain interval arithmetic, caps the posterior
//! standard deviation at `sqrt(σ_s)` and bounds `‖G k(x)‖` row by row. It is
//! inclusion-monotone but very loose once cells are small compared with the
//! lengthscale.
//!
//! `Refined` (the default) intersects the interval result with bounds anchored
//! at the box center `c`. Write `d = sup_x ‖k_x − k_c‖_H`, which for a
//! stationary kernel is `sqrt(2σ_s − 2 min_x κ(x, c))`. Then
//!
//! * the posterior standard deviation is a seminorm of `k_x`, dominated by the
//!   RKHS norm, so `σ(x) ≤ σ(c) + d`;
//! * `‖G k(x)‖ ≤ ‖G k(c)‖ + ‖G S‖·d`, where `S` samples at the retained
//!   inputs and `‖G S‖ = max_k sqrt(λ_k)/(λ_k + σ_n²)`;
//! * the kernel part `g` of the mean satisfies `|g(x) − g(c)| ≤ ‖g‖_H·d`;
//! * without a feature map, the mean-value theorem gives
//!   `|μ(x) − μ(c)| ≤ Σ_k (|∂_k μ(c)| + ‖g‖_H·D_k)·r_k` with
//!   `D_k = sup_ξ ‖∂_k k_ξ − ∂_k k_c‖_H` and `r_k` the box half-widths.
//!
//! Boxes may also be split into `s^n` sub-boxes whose enclosures are joined.
//! Results are padded outward by a few ulps to absorb summation-order
//! differences against pointwise evaluation.

use serde::{Deserialize, Serialize};

use crate::geometry::Rect;
use crate::gp::{check_delta, ActionModel, GpError, KernelSpec, PriorMean, Regressor};
use crate::interval::Interval;

const PAD_REL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Enclosure {
    Interval,
    #[default]
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachOptions {
    pub enclosure: Enclosure,
    /// Sub-boxes per axis.
    pub subdivisions: usize,
}

impl Default for ReachOptions {
    fn default() -> Self {
        ReachOptions {
            enclosure: Enclosure::Refined,
            subdivisions: 1,
        }
    }
}

impl ReachOptions {
    pub fn interval() -> Self {
        ReachOptions {
            enclosure: Enclosure::Interval,
            subdivisions: 1,
        }
    }
}

/// Mean enclosure and sup error bound over one box.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionBounds {
    pub mean: Vec<Interval>,
    pub error: Vec<f64>,
}

fn feature_box(kernel: &KernelSpec, b: &Rect) -> Vec<Interval> {
    match &kernel.feature_map {
        Some(fm) => fm.propagate(&b.intervals()),
        None => b.intervals(),
    }
}

fn sq_dist_range(fbox: &[Interval], p: &[f64]) -> Interval {
    fbox.iter()
        .zip(p)
        .fold(Interval::point(0.0), |acc, (iv, &v)| acc + (*iv + (-v)).square())
}

fn check_box(reg: &Regressor, b: &Rect) -> Result<(), GpError> {
    if b.dim() != reg.dim() {
        return Err(GpError::Dimension {
            expected: reg.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

fn pad(iv: Interval) -> Interval {
    let p = PAD_REL * (1.0 + iv.mag());
    Interval {
        lo: iv.lo - p,
        hi: iv.hi + p,
    }
}

/// Enclosure of `{κ(x, x_j) : x ∈ b}` for retained input `j`. Exact for the
/// plain squared-exponential kernel.
pub fn kernel_range(reg: &Regressor, a: usize, b: &Rect, j: usize) -> Result<Interval, GpError> {
    check_box(reg, b)?;
    let m = reg.model(a)?;
    let f = m.features().get(j).ok_or(GpError::Dimension {
        expected: m.len(),
        got: j,
    })?;
    let kernel = reg.kernel();
    let d2 = sq_dist_range(&feature_box(kernel, b), f);
    Ok(Interval::new(
        kernel.from_sq_dist(d2.hi),
        kernel.from_sq_dist(d2.lo),
    ))
}

/// Enclosure of the posterior mean over `b`, one interval per output.
pub fn mean_bounds(
    reg: &Regressor,
    a: usize,
    b: &Rect,
    opts: &ReachOptions,
) -> Result<Vec<Interval>, GpError> {
    Ok(analyze(reg, a, b, None, opts)?.mean)
}

/// `mean_bounds ⊕ c`.
pub fn post(
    reg: &Regressor,
    a: usize,
    b: &Rect,
    noise: &Rect,
    opts: &ReachOptions,
) -> Result<Rect, GpError> {
    let mean = mean_bounds(reg, a, b, opts)?;
    Ok(Rect::from_intervals(&mean).minkowski_sum(noise))
}

/// Upper bound on `sup_{x ∈ b} ε(x, δ)`, one entry per output.
pub fn sup_error_bound(
    reg: &Regressor,
    a: usize,
    b: &Rect,
    delta: f64,
    opts: &ReachOptions,
) -> Result<Vec<f64>, GpError> {
    check_delta(delta)?;
    Ok(analyze(reg, a, b, Some(delta), opts)?.error)
}

/// Mean enclosure and error bound in a single pass over the sub-boxes.
pub fn region_bounds(
    reg: &Regressor,
    a: usize,
    b: &Rect,
    delta: f64,
    opts: &ReachOptions,
) -> Result<RegionBounds, GpError> {
    check_delta(delta)?;
    analyze(reg, a, b, Some(delta), opts)
}

fn analyze(
    reg: &Regressor,
    a: usize,
    b: &Rect,
    delta: Option<f64>,
    opts: &ReachOptions,
) -> Result<RegionBounds, GpError> {
    check_box(reg, b)?;
    let m = reg.model(a)?;
    let n = reg.dim();
    let parts = opts.subdivisions.max(1);
    let subs = if parts == 1 || b.is_degenerate() {
        vec![b.clone()]
    } else {
        b.subdivide(parts)
    };
    let mut mean: Option<Vec<Interval>> = None;
    let mut error = vec![0.0; if delta.is_some() { n } else { 0 }];
    for s in &subs {
        let r = match opts.enclosure {
            Enclosure::Interval => interval_box(reg, m, s, delta),
            Enclosure::Refined => refined_box(reg, m, s, delta),
        };
        mean = Some(match mean {
            None => r.mean,
            Some(acc) => acc.iter().zip(&r.mean).map(|(x, y)| x.hull(y)).collect(),
        });
        for (e, v) in error.iter_mut().zip(&r.error) {
            *e = f64::max(*e, *v);
        }
    }
    Ok(RegionBounds {
        mean: mean.unwrap().into_iter().map(pad).collect(),
        error: error.into_iter().map(|e| e * (1.0 + PAD_REL) + PAD_REL).collect(),
    })
}

fn prior_range(prior: PriorMean, b: &Rect, i: usize) -> Interval {
    match prior {
        PriorMean::Zero => Interval::point(0.0),
        PriorMean::Identity => b.interval(i),
    }
}

fn kernel_ranges(kernel: &KernelSpec, m: &ActionModel, fbox: &[Interval]) -> Vec<Interval> {
    m.features()
        .iter()
        .map(|f| {
            let d2 = sq_dist_range(fbox, f);
            Interval::new(kernel.from_sq_dist(d2.hi), kernel.from_sq_dist(d2.lo))
        })
        .collect()
}

/// `Σ_j w_j·[κ_j]` for output `i`.
fn naive_kernel_part(m: &ActionModel, ranges: &[Interval], i: usize) -> Interval {
    m.weights(i)
        .iter()
        .zip(ranges)
        .fold(Interval::point(0.0), |acc, (w, r)| acc + r.scale(*w))
}

/// `‖G k‖ ≤ sqrt(Σ_r mag(Σ_j G_rj [κ_j])²)`: each row of `G k(x)` lies in the
/// interval sum, so its square is at most the squared magnitude.
fn interval_weight_norm(m: &ActionModel, ranges: &[Interval]) -> f64 {
    let g = m.solve();
    (0..g.nrows())
        .map(|r| {
            let row = ranges
                .iter()
                .enumerate()
                .fold(Interval::point(0.0), |acc, (j, iv)| acc + iv.scale(g[(r, j)]));
            row.mag() * row.mag()
        })
        .sum::<f64>()
        .sqrt()
}

fn interval_box(reg: &Regressor, m: &ActionModel, s: &Rect, delta: Option<f64>) -> RegionBounds {
    let kernel = reg.kernel();
    let ranges = kernel_ranges(kernel, m, &feature_box(kernel, s));
    let mean = (0..reg.dim())
        .map(|i| prior_range(reg.prior_mean(), s, i) + naive_kernel_part(m, &ranges, i))
        .collect();
    let error = match delta {
        Some(d) => reg.combine_error(
            m,
            kernel.signal_variance.sqrt(),
            interval_weight_norm(m, &ranges),
            d,
        ),
        None => Vec::new(),
    };
    RegionBounds { mean, error }
}

fn refined_box(reg: &Regressor, m: &ActionModel, s: &Rect, delta: Option<f64>) -> RegionBounds {
    let kernel = reg.kernel();
    let sv = kernel.signal_variance;
    let n = reg.dim();
    let c = s.center();
    let r = s.half_widths();
    let fc = kernel.features(&c);
    let fbox = feature_box(kernel, s);
    let ranges = kernel_ranges(kernel, m, &fbox);

    let kc: Vec<f64> = m
        .features()
        .iter()
        .map(|f| kernel.eval_features(&fc, f))
        .collect();
    let kmin = kernel.from_sq_dist(sq_dist_range(&fbox, &fc).hi);
    let d = (2.0 * sv - 2.0 * kmin).max(0.0).sqrt();

    let ell2 = kernel.lengthscale * kernel.lengthscale;
    // D_k² ≤ 2σ_s/ℓ² − 2κ·(1/ℓ² − t²/ℓ⁴) over |t| ≤ r_k, κ ∈ [κ_min, σ_s].
    let dk: Option<Vec<f64>> = kernel.feature_map.is_none().then(|| {
        r.iter()
            .map(|&rk| {
                let fac = 1.0 / ell2 - rk * rk / (ell2 * ell2);
                let kappa = if fac >= 0.0 { kmin } else { sv };
                (2.0 * sv / ell2 - 2.0 * kappa * fac).max(0.0).sqrt()
            })
            .collect()
    });

    let mut mean = Vec::with_capacity(n);
    for i in 0..n {
        let w = m.weights(i);
        let prior = prior_range(reg.prior_mean(), s, i);
        let gc: f64 = w.iter().zip(&kc).map(|(w, k)| w * k).sum();
        let norm = m.mean_norm(i);
        let zeroth = Interval::new(gc - norm * d, gc + norm * d);
        let kpart = naive_kernel_part(m, &ranges, i).meet(&zeroth);
        let mut full = prior + kpart;
        if let Some(dk) = &dk {
            let prior_c = match reg.prior_mean() {
                PriorMean::Zero => 0.0,
                PriorMean::Identity => c[i],
            };
            let mut spread = 0.0;
            for k in 0..n {
                let grad: f64 = w
                    .iter()
                    .zip(&kc)
                    .zip(m.features())
                    .map(|((w, kv), xj)| -w * kv * (c[k] - xj[k]) / ell2)
                    .sum();
                let prior_grad = match reg.prior_mean() {
                    PriorMean::Identity if k == i => 1.0,
                    _ => 0.0,
                };
                spread += ((prior_grad + grad).abs() + norm * dk[k]) * r[k];
            }
            let center = prior_c + gc;
            full = full.meet(&Interval::new(center - spread, center + spread));
        }
        mean.push(full);
    }

    let error = match delta {
        Some(dl) => {
            let gk = m.solve() * nalgebra::DVector::from_column_slice(&kc);
            let var_c = (sv - gk.iter().zip(&kc).map(|(g, k)| g * k).sum::<f64>()).clamp(0.0, sv);
            let sigma = sv.sqrt().min(var_c.sqrt() + d);
            let wn = interval_weight_norm(m, &ranges).min(gk.norm() + m.weight_gain() * d);
            reg.combine_error(m, sigma, wn, dl)
        }
        None => Vec::new(),
    };
    RegionBounds { mean, error }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{ActionSamples, Dataset, FitConfig};

    fn small() -> Regressor {
        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.5 - 1.0, 0.3 * i as f64]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0].sin(), x[1] * x[0]]).collect();
        let data = Dataset::new(
            2,
            0.01,
            vec![ActionSamples {
                inputs: xs,
                outputs: ys,
            }],
        )
        .unwrap();
        let kernel = KernelSpec::squared_exponential(1.0, 0.8).unwrap();
        let cfg = FitConfig {
            noise_std: 0.1,
            budget: 5,
            rkhs_bounds: vec![1.0, 1.0],
            gamma: None,
            prior_mean: PriorMean::Zero,
            seed: 3,
        };
        Regressor::fit(&data, &kernel, &cfg).unwrap()
    }

    #[test]
    fn kernel_range_peaks_when_point_inside() {
        let reg = small();
        let x0 = reg.model(0).unwrap().inputs()[2].clone();
        let b = Rect::new(
            x0.iter().map(|v| v - 0.1).collect(),
            x0.iter().map(|v| v + 0.2).collect(),
        )
        .unwrap();
        assert_eq!(kernel_range(&reg, 0, &b, 2).unwrap().hi, 1.0);
    }

    #[test]
    fn degenerate_box_matches_pointwise() {
        let reg = small();
        let x = [0.13, -0.4];
        let b = Rect::point(&x);
        let mu = reg.posterior_mean(0, &x).unwrap();
        let eps = reg.error_bound(0, &x, 0.05).unwrap();
        let rb = region_bounds(&reg, 0, &b, 0.05, &ReachOptions::default()).unwrap();
        for i in 0..2 {
            assert!((rb.mean[i].lo - mu[i]).abs() < 1e-9);
            assert!((rb.mean[i].hi - mu[i]).abs() < 1e-9);
            assert!(rb.error[i] >= eps[i] && rb.error[i] <= 1.1 * eps[i]);
        }
    }

    #[test]
    fn post_adds_noise_cell() {
        let reg = small();
        let b = Rect::new(vec![0.0, 0.0], vec![0.2, 0.1]).unwrap();
        let opts = ReachOptions::default();
        let mb = mean_bounds(&reg, 0, &b, &opts).unwrap();
        let p = post(&reg, 0, &b, &Rect::centered_cube(2, 0.01), &opts).unwrap();
        for i in 0..2 {
            assert!((p.lo()[i] - (mb[i].lo - 0.01)).abs() < 1e-15);
            assert!((p.hi()[i] - (mb[i].hi + 0.01)).abs() < 1e-15);
        }
    }
}
