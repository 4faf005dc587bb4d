//! Kernel regression of the one-step dynamics with uniform error bounds.
//!
//! One model is fitted per action. All output dimensions of an action share
//! the retained inputs, the kernel and therefore the solve matrix
//! `G = (K + σ_n² I)⁻¹`; only the weight vectors and RKHS bounds differ.
//!
//! The error bound for output `i` at `x` is
//!
//! ```text
//! ε_i(x, δ) = σ(x) · sqrt(B_i² − γ_i) + sqrt(λ_x / 2 · ln(2/δ)),
//! λ_x      = 4 σ_v² ‖G k(x)‖²
//! ```
//!
//! where `B_i` bounds the RKHS norm of the modelled function and `σ_v` bounds
//! the (uniform) process noise.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::Interval;
use crate::io::FormatError;

/// Variances in `[-NEG_VAR_TOL, 0)` are treated as rounding noise.
pub const NEG_VAR_TOL: f64 = 1e-12;

/// First jitter tried when the regularised Gram matrix fails to factor.
const JITTER_START: f64 = 1e-10;
const JITTER_ESCALATIONS: usize = 3;
/// Pivots below this fraction of the largest diagonal entry count as singular.
const PIVOT_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("invalid feature map: {0}")]
    FeatureMap(String),
    #[error("action {0} has no samples")]
    EmptyAction(usize),
    #[error("action {action}: budget {budget} exceeds the {available} available samples")]
    BudgetExceedsData {
        action: usize,
        budget: usize,
        available: usize,
    },
    #[error("action {action}: kernel matrix is singular or not positive definite")]
    Singular { action: usize },
    #[error("action {action}, output {dim}: gamma {gamma} exceeds B² = {bound_sq}")]
    InconsistentRkhsBound {
        action: usize,
        dim: usize,
        gamma: f64,
        bound_sq: f64,
    },
    #[error("posterior variance {0} is negative beyond rounding")]
    NegativeVariance(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("unknown action {0}")]
    UnknownAction(usize),
    #[error("confidence parameter must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }
}

/// One affine layer `act(W x + b)`; `weights` is row-major, one row per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Fixed feature map composed in front of the base kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub layers: Vec<Layer>,
}

impl FeatureMap {
    pub fn new(layers: Vec<Layer>) -> Result<Self, GpError> {
        let fm = FeatureMap { layers };
        fm.validate()?;
        Ok(fm)
    }

    /// Loads a feature map from its TOML description.
    pub fn from_toml_str(s: &str) -> Result<Self, GpError> {
        let fm: FeatureMap = toml::from_str(s).map_err(|e| GpError::FeatureMap(e.to_string()))?;
        fm.validate()?;
        Ok(fm)
    }

    /// Identity layers of width `dim`.
    pub fn identity(dim: usize, depth: usize) -> Self {
        let eye: Vec<Vec<f64>> = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        FeatureMap {
            layers: (0..depth)
                .map(|_| Layer {
                    weights: eye.clone(),
                    bias: vec![0.0; dim],
                    activation: Activation::Identity,
                })
                .collect(),
        }
    }

    fn validate(&self) -> Result<(), GpError> {
        if self.layers.is_empty() {
            return Err(GpError::FeatureMap("no layers".into()));
        }
        let mut width = None;
        for (k, layer) in self.layers.iter().enumerate() {
            let rows = layer.weights.len();
            if rows == 0 || layer.bias.len() != rows {
                return Err(GpError::FeatureMap(format!("layer {k}: bias/row mismatch")));
            }
            let cols = layer.weights[0].len();
            if layer.weights.iter().any(|r| r.len() != cols) {
                return Err(GpError::FeatureMap(format!("layer {k}: ragged weights")));
            }
            if let Some(w) = width {
                if w != cols {
                    return Err(GpError::FeatureMap(format!(
                        "layer {k}: expects {cols} inputs, previous layer gives {w}"
                    )));
                }
            }
            width = Some(rows);
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cur = layer
                .weights
                .iter()
                .zip(&layer.bias)
                .map(|(row, b)| {
                    // Same accumulation order as `propagate`, so point boxes agree.
                    let s = row.iter().zip(&cur).fold(*b, |acc, (w, v)| acc + w * v);
                    layer.activation.apply(s)
                })
                .collect();
        }
        cur
    }

    /// Interval image of a box. Each affine output is exact for independent
    /// inputs and the activations are monotone, so every layer is exact on
    /// its own; composition may overestimate.
    pub fn propagate(&self, x: &[Interval]) -> Vec<Interval> {
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cur = layer
                .weights
                .iter()
                .zip(&layer.bias)
                .map(|(row, b)| {
                    let s = row
                        .iter()
                        .zip(&cur)
                        .fold(Interval::point(*b), |acc, (w, iv)| acc + iv.scale(*w));
                    s.map_monotone(|v| layer.activation.apply(v))
                })
                .collect();
        }
        cur
    }
}

/// Squared-exponential kernel `σ_s · exp(−‖ψ(x) − ψ(x')‖² / 2ℓ²)`, with `ψ`
/// the optional feature map (identity when absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub signal_variance: f64,
    pub lengthscale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_map: Option<FeatureMap>,
}

impl KernelSpec {
    pub fn squared_exponential(signal_variance: f64, lengthscale: f64) -> Result<Self, GpError> {
        let k = KernelSpec {
            signal_variance,
            lengthscale,
            feature_map: None,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn with_feature_map(mut self, fm: FeatureMap) -> Result<Self, GpError> {
        fm.validate()?;
        self.feature_map = Some(fm);
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(GpError::InvalidHyperparameter(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(GpError::InvalidHyperparameter(format!(
                "lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if let Some(fm) = &self.feature_map {
            fm.validate()?;
        }
        Ok(())
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        match &self.feature_map {
            Some(fm) => fm.apply(x),
            None => x.to_vec(),
        }
    }

    /// Kernel value as a function of the squared feature-space distance.
    pub fn from_sq_dist(&self, d2: f64) -> f64 {
        self.signal_variance * (-d2 / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    pub fn eval_features(&self, fx: &[f64], fy: &[f64]) -> f64 {
        let d2: f64 = fx.iter().zip(fy).map(|(a, b)| (a - b) * (a - b)).sum();
        self.from_sq_dist(d2)
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.eval_features(&self.features(x), &self.features(y))
    }

    /// Gram matrix over a set of feature vectors.
    pub fn gram(&self, feats: &[Vec<f64>]) -> DMatrix<f64> {
        let m = feats.len();
        let mut k = DMatrix::zeros(m, m);
        for i in 0..m {
            k[(i, i)] = self.signal_variance;
            for j in 0..i {
                let v = self.eval_features(&feats[i], &feats[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

/// Transition samples `(x, x⁺)` for one action.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionSamples {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl ActionSamples {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Transition dataset grouped by action, with the uniform noise bound `σ_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    noise_bound: f64,
    actions: Vec<ActionSamples>,
}

impl Dataset {
    pub fn new(dim: usize, noise_bound: f64, actions: Vec<ActionSamples>) -> Result<Self, GpError> {
        if !(noise_bound >= 0.0 && noise_bound.is_finite()) {
            return Err(GpError::InvalidHyperparameter(format!(
                "noise bound must be nonnegative, got {noise_bound}"
            )));
        }
        for s in &actions {
            if s.inputs.len() != s.outputs.len() {
                return Err(GpError::Dimension {
                    expected: s.inputs.len(),
                    got: s.outputs.len(),
                });
            }
            for v in s.inputs.iter().chain(&s.outputs) {
                if v.len() != dim {
                    return Err(GpError::Dimension {
                        expected: dim,
                        got: v.len(),
                    });
                }
            }
        }
        Ok(Dataset {
            dim,
            noise_bound,
            actions,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_bound(&self) -> f64 {
        self.noise_bound
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn action(&self, a: usize) -> &ActionSamples {
        &self.actions[a]
    }

    pub fn len(&self) -> usize {
        self.actions.iter().map(|a| a.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Columnar text with a `#`-prefixed header naming `n`, `|U|` and `σ_v`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# dshield-dataset v1").unwrap();
        writeln!(
            out,
            "# n={} actions={} sigma_v={:?}",
            self.dim,
            self.actions.len(),
            self.noise_bound
        )
        .unwrap();
        let mut header = vec!["action".to_string()];
        header.extend((0..self.dim).map(|i| format!("x{i}")));
        header.extend((0..self.dim).map(|i| format!("y{i}")));
        writeln!(out, "{}", header.join(",")).unwrap();
        for (a, s) in self.actions.iter().enumerate() {
            for (x, y) in s.inputs.iter().zip(&s.outputs) {
                let mut row = vec![a.to_string()];
                row.extend(x.iter().chain(y).map(|v| format!("{v:?}")));
                writeln!(out, "{}", row.join(",")).unwrap();
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, FormatError> {
        let mut meta = None;
        let mut saw_magic = false;
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let body = line.trim_start_matches('#').trim();
            if body.starts_with("dshield-dataset") {
                if body != "dshield-dataset v1" {
                    return Err(FormatError::Version(body.to_string()));
                }
                saw_magic = true;
            } else if body.starts_with("n=") {
                let kv = crate::io::parse_key_values(body)?;
                let n: usize = crate::io::require(&kv, "n")?;
                let actions: usize = crate::io::require(&kv, "actions")?;
                let sigma: f64 = crate::io::require(&kv, "sigma_v")?;
                meta = Some((n, actions, sigma));
            }
        }
        if !saw_magic {
            return Err(FormatError::Missing("dataset header".into()));
        }
        let (n, num_actions, sigma) =
            meta.ok_or_else(|| FormatError::Missing("n/actions/sigma_v header".into()))?;
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| FormatError::Parse(e.to_string()))?
            .clone();
        if header.len() != 1 + 2 * n {
            return Err(FormatError::Parse(format!(
                "expected {} columns, found {}",
                1 + 2 * n,
                header.len()
            )));
        }
        let mut actions = vec![ActionSamples::default(); num_actions];
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| FormatError::Parse(e.to_string()))?;
            let a: usize = rec[0]
                .parse()
                .map_err(|_| FormatError::Parse(format!("record {line}: bad action id")))?;
            if a >= num_actions {
                return Err(FormatError::Parse(format!(
                    "record {line}: action {a} out of range"
                )));
            }
            let vals: Result<Vec<f64>, _> = (1..rec.len()).map(|i| rec[i].parse::<f64>()).collect();
            let vals =
                vals.map_err(|e| FormatError::Parse(format!("record {line}: {e}")))?;
            actions[a].inputs.push(vals[..n].to_vec());
            actions[a].outputs.push(vals[n..].to_vec());
        }
        Dataset::new(n, sigma, actions).map_err(|e| FormatError::Parse(e.to_string()))
    }
}

/// Prior mean subtracted before regression and added back to predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMean {
    #[default]
    Zero,
    /// `m(x) = x`; the kernel model then captures the displacement `f(x) − x`.
    Identity,
}

impl PriorMean {
    fn eval(self, x: &[f64], i: usize) -> f64 {
        match self {
            PriorMean::Zero => 0.0,
            PriorMean::Identity => x[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Observation-noise parameter `σ_n` (may be 0 for exact interpolation).
    pub noise_std: f64,
    /// Number of samples retained per action for posterior prediction.
    pub budget: usize,
    /// RKHS norm bound `B_i` per output dimension.
    pub rkhs_bounds: Vec<f64>,
    /// Information constant `γ_i` per output dimension; zeros when `None`.
    pub gamma: Option<Vec<f64>>,
    pub prior_mean: PriorMean,
    pub seed: u64,
}

/// Per-action fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionModel {
    inputs: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
    solve: DMatrix<f64>,
    weights: Vec<DVector<f64>>,
    rkhs_bounds: Vec<f64>,
    gamma: Vec<f64>,
    mean_norms: Vec<f64>,
    weight_gain: f64,
    gram: DMatrix<f64>,
    /// `σ_n²` plus any jitter that was needed.
    regularizer: f64,
}

impl ActionModel {
    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    /// Feature-space images of the retained inputs.
    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    /// `G = (K + σ_n² I)⁻¹`.
    pub fn solve(&self) -> &DMatrix<f64> {
        &self.solve
    }

    /// `w_i = G (Y_i − m_i(X))`.
    pub fn weights(&self, dim: usize) -> &DVector<f64> {
        &self.weights[dim]
    }

    pub fn rkhs_bound(&self, dim: usize) -> f64 {
        self.rkhs_bounds[dim]
    }

    pub fn gamma(&self, dim: usize) -> f64 {
        self.gamma[dim]
    }

    /// RKHS norm of the kernel part of the posterior mean, `sqrt(wᵀ K w)`.
    pub fn mean_norm(&self, dim: usize) -> f64 {
        self.mean_norms[dim]
    }

    /// Operator norm of `h ↦ G (h(x_j))_j` from the RKHS to ℝ^m, i.e.
    /// `max_k sqrt(λ_k) / (λ_k + σ_n²)` over the eigenvalues of `K`.
    pub fn weight_gain(&self) -> f64 {
        self.weight_gain
    }

    pub fn regularizer(&self) -> f64 {
        self.regularizer
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// `G k` with two steps of iterative refinement against `K + σ_n² I`.
    pub fn solve_refined(&self, k: &DVector<f64>) -> DVector<f64> {
        refine(&self.gram, self.regularizer, &self.solve, k)
    }
}

fn refine(
    gram: &DMatrix<f64>,
    reg: f64,
    solve: &DMatrix<f64>,
    y: &DVector<f64>,
) -> DVector<f64> {
    let mut w = solve * y;
    for _ in 0..2 {
        let mut r = y - gram * &w;
        r -= &w * reg;
        w += solve * r;
    }
    w
}

/// Posterior quantities at one point, sharing a single kernel-vector pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PointStats {
    pub mean: Vec<f64>,
    pub variance: f64,
    /// `‖G k(x)‖₂`.
    pub weight_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    kernel: KernelSpec,
    noise_std: f64,
    noise_bound: f64,
    prior_mean: PriorMean,
    dim: usize,
    models: Vec<ActionModel>,
}

impl Regressor {
    /// Fits one model per action. Actions are fitted in parallel; the result
    /// does not depend on the number of workers.
    pub fn fit(data: &Dataset, kernel: &KernelSpec, cfg: &FitConfig) -> Result<Self, GpError> {
        kernel.validate()?;
        let n = data.dim();
        if let Some(fm) = &kernel.feature_map {
            if fm.input_dim() != n {
                return Err(GpError::FeatureMap(format!(
                    "feature map expects {} inputs, data has {n}",
                    fm.input_dim()
                )));
            }
        }
        if !(cfg.noise_std >= 0.0 && cfg.noise_std.is_finite()) {
            return Err(GpError::InvalidHyperparameter(format!(
                "noise std must be nonnegative, got {}",
                cfg.noise_std
            )));
        }
        if cfg.rkhs_bounds.len() != n {
            return Err(GpError::Dimension {
                expected: n,
                got: cfg.rkhs_bounds.len(),
            });
        }
        if cfg.rkhs_bounds.iter().any(|b| !(*b >= 0.0)) {
            return Err(GpError::InvalidHyperparameter(
                "RKHS bounds must be nonnegative".into(),
            ));
        }
        let gamma = cfg.gamma.clone().unwrap_or_else(|| vec![0.0; n]);
        if gamma.len() != n {
            return Err(GpError::Dimension {
                expected: n,
                got: gamma.len(),
            });
        }
        if cfg.budget == 0 {
            return Err(GpError::InvalidHyperparameter("budget must be at least 1".into()));
        }

        let models: Result<Vec<ActionModel>, GpError> = (0..data.num_actions())
            .into_par_iter()
            .map(|a| fit_action(a, data.action(a), kernel, cfg, &gamma))
            .collect();
        Ok(Regressor {
            kernel: kernel.clone(),
            noise_std: cfg.noise_std,
            noise_bound: data.noise_bound(),
            prior_mean: cfg.prior_mean,
            dim: n,
            models: models?,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Process-noise bound `σ_v`.
    pub fn noise_bound(&self) -> f64 {
        self.noise_bound
    }

    pub fn prior_mean(&self) -> PriorMean {
        self.prior_mean
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_actions(&self) -> usize {
        self.models.len()
    }

    pub fn model(&self, a: usize) -> Result<&ActionModel, GpError> {
        self.models.get(a).ok_or(GpError::UnknownAction(a))
    }

    fn check_point(&self, x: &[f64]) -> Result<(), GpError> {
        if x.len() != self.dim {
            return Err(GpError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `K_{x,X}` for action `a`.
    pub fn kernel_vector(&self, a: usize, x: &[f64]) -> Result<DVector<f64>, GpError> {
        self.check_point(x)?;
        let m = self.model(a)?;
        let fx = self.kernel.features(x);
        Ok(DVector::from_iterator(
            m.features.len(),
            m.features.iter().map(|f| self.kernel.eval_features(&fx, f)),
        ))
    }

    pub fn posterior_mean(&self, a: usize, x: &[f64]) -> Result<Vec<f64>, GpError> {
        let k = self.kernel_vector(a, x)?;
        let m = self.model(a)?;
        Ok((0..self.dim)
            .map(|i| self.prior_mean.eval(x, i) + k.dot(&m.weights[i]))
            .collect())
    }

    /// Posterior variance, shared by all output dimensions of the action.
    pub fn posterior_var(&self, a: usize, x: &[f64]) -> Result<f64, GpError> {
        let k = self.kernel_vector(a, x)?;
        let m = self.model(a)?;
        let gk = m.solve_refined(&k);
        self.clamp_variance(self.kernel.signal_variance - k.dot(&gk))
    }

    fn clamp_variance(&self, v: f64) -> Result<f64, GpError> {
        if v < -NEG_VAR_TOL {
            return Err(GpError::NegativeVariance(v));
        }
        Ok(v.clamp(0.0, self.kernel.signal_variance))
    }

    pub fn point_stats(&self, a: usize, x: &[f64]) -> Result<PointStats, GpError> {
        let k = self.kernel_vector(a, x)?;
        let m = self.model(a)?;
        let gk = m.solve_refined(&k);
        let variance = self.clamp_variance(self.kernel.signal_variance - k.dot(&gk))?;
        Ok(PointStats {
            mean: (0..self.dim)
                .map(|i| self.prior_mean.eval(x, i) + k.dot(&m.weights[i]))
                .collect(),
            variance,
            weight_norm: gk.norm(),
        })
    }

    /// Pointwise uniform error bound `ε(x, δ)`, one entry per output.
    pub fn error_bound(&self, a: usize, x: &[f64], delta: f64) -> Result<Vec<f64>, GpError> {
        check_delta(delta)?;
        let s = self.point_stats(a, x)?;
        let m = self.model(a)?;
        Ok(self.combine_error(m, s.variance.sqrt(), s.weight_norm, delta))
    }

    /// `σ · sqrt(B_i² − γ_i) + sqrt(λ/2 · ln(2/δ))` with `λ = 4 σ_v² w²`.
    pub(crate) fn combine_error(
        &self,
        m: &ActionModel,
        sigma: f64,
        weight_norm: f64,
        delta: f64,
    ) -> Vec<f64> {
        let lambda = 4.0 * self.noise_bound * self.noise_bound * weight_norm * weight_norm;
        let noise_term = (lambda / 2.0 * (2.0 / delta).ln()).sqrt();
        (0..self.dim)
            .map(|i| {
                let b2 = m.rkhs_bounds[i] * m.rkhs_bounds[i];
                sigma * (b2 - m.gamma[i]).max(0.0).sqrt() + noise_term
            })
            .collect()
    }

    /// Serialises the fitted model as versioned JSON.
    pub fn to_json(&self) -> String {
        let file = RegressorFile {
            format: "dshield-regressor".into(),
            version: 1,
            kernel: self.kernel.clone(),
            noise_std: self.noise_std,
            noise_bound: self.noise_bound,
            prior_mean: self.prior_mean,
            dim: self.dim,
            actions: self
                .models
                .iter()
                .map(|m| ActionModelFile {
                    inputs: m.inputs.clone(),
                    solve: m.solve.as_slice().to_vec(),
                    weights: m.weights.iter().map(|w| w.as_slice().to_vec()).collect(),
                    rkhs_bounds: m.rkhs_bounds.clone(),
                    gamma: m.gamma.clone(),
                    mean_norms: m.mean_norms.clone(),
                    weight_gain: m.weight_gain,
                    regularizer: m.regularizer,
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("regressor serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, FormatError> {
        let f: RegressorFile =
            serde_json::from_str(s).map_err(|e| FormatError::Parse(e.to_string()))?;
        if f.format != "dshield-regressor" || f.version != 1 {
            return Err(FormatError::Version(format!("{} v{}", f.format, f.version)));
        }
        f.kernel
            .validate()
            .map_err(|e| FormatError::Parse(e.to_string()))?;
        let models = f
            .actions
            .into_iter()
            .map(|m| {
                let len = m.inputs.len();
                if m.solve.len() != len * len || m.weights.iter().any(|w| w.len() != len) {
                    return Err(FormatError::Parse("inconsistent model sizes".into()));
                }
                let features: Vec<Vec<f64>> =
                    m.inputs.iter().map(|x| f.kernel.features(x)).collect();
                Ok(ActionModel {
                    gram: f.kernel.gram(&features),
                    regularizer: m.regularizer,
                    features,
                    inputs: m.inputs,
                    solve: DMatrix::from_column_slice(len, len, &m.solve),
                    weights: m
                        .weights
                        .into_iter()
                        .map(|w| DVector::from_vec(w))
                        .collect(),
                    rkhs_bounds: m.rkhs_bounds,
                    gamma: m.gamma,
                    mean_norms: m.mean_norms,
                    weight_gain: m.weight_gain,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Regressor {
            kernel: f.kernel,
            noise_std: f.noise_std,
            noise_bound: f.noise_bound,
            prior_mean: f.prior_mean,
            dim: f.dim,
            models,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct RegressorFile {
    format: String,
    version: u32,
    kernel: KernelSpec,
    noise_std: f64,
    noise_bound: f64,
    prior_mean: PriorMean,
    dim: usize,
    actions: Vec<ActionModelFile>,
}

#[derive(Serialize, Deserialize)]
struct ActionModelFile {
    inputs: Vec<Vec<f64>>,
    /// Column-major `m × m`.
    solve: Vec<f64>,
    weights: Vec<Vec<f64>>,
    rkhs_bounds: Vec<f64>,
    gamma: Vec<f64>,
    mean_norms: Vec<f64>,
    weight_gain: f64,
    regularizer: f64,
}

pub(crate) fn check_delta(delta: f64) -> Result<(), GpError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(GpError::InvalidDelta(delta))
    }
}

fn fit_action(
    a: usize,
    samples: &ActionSamples,
    kernel: &KernelSpec,
    cfg: &FitConfig,
    gamma: &[f64],
) -> Result<ActionModel, GpError> {
    if samples.is_empty() {
        return Err(GpError::EmptyAction(a));
    }
    if cfg.budget > samples.len() {
        return Err(GpError::BudgetExceedsData {
            action: a,
            budget: cfg.budget,
            available: samples.len(),
        });
    }
    for (i, (b, g)) in cfg.rkhs_bounds.iter().zip(gamma).enumerate() {
        if *g > b * b {
            return Err(GpError::InconsistentRkhsBound {
                action: a,
                dim: i,
                gamma: *g,
                bound_sq: b * b,
            });
        }
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(a as u64);
    order.shuffle(&mut rng);
    order.truncate(cfg.budget);

    let inputs: Vec<Vec<f64>> = order.iter().map(|&j| samples.inputs[j].clone()).collect();
    let features: Vec<Vec<f64>> = inputs.iter().map(|x| kernel.features(x)).collect();
    let gram = kernel.gram(&features);
    let (solve, reg) = regularized_inverse(&gram, cfg.noise_std * cfg.noise_std)
        .ok_or(GpError::Singular { action: a })?;

    let n = cfg.rkhs_bounds.len();
    let weights: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let y = DVector::from_iterator(
                inputs.len(),
                order
                    .iter()
                    .zip(&inputs)
                    .map(|(&j, x)| samples.outputs[j][i] - cfg.prior_mean.eval(x, i)),
            );
            refine(&gram, reg, &solve, &y)
        })
        .collect();
    let mean_norms = weights
        .iter()
        .map(|w| w.dot(&(&gram * w)).max(0.0).sqrt())
        .collect();
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let weight_gain = eig
        .iter()
        .map(|&l| {
            let l = l.max(0.0);
            if l + reg > 0.0 {
                l.sqrt() / (l + reg)
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);

    Ok(ActionModel {
        inputs,
        features,
        solve,
        weights,
        rkhs_bounds: cfg.rkhs_bounds.clone(),
        gamma: gamma.to_vec(),
        mean_norms,
        weight_gain,
        gram,
        regularizer: reg,
    })
}

/// Inverts `K + reg·I` through a Cholesky factorisation.
///
/// With `reg > 0` a failed factorisation is retried with jitter `1e-10`,
/// escalating ×10 at most three times. With `reg == 0` the caller asked for
/// exact interpolation and no jitter is added.
fn regularized_inverse(gram: &DMatrix<f64>, reg: f64) -> Option<(DMatrix<f64>, f64)> {
    let m = gram.nrows();
    let max_diag = (0..m).map(|i| gram[(i, i)]).fold(0.0, f64::max) + reg;
    let attempt = |r: f64| -> Option<DMatrix<f64>> {
        let mut a = gram.clone();
        for i in 0..m {
            a[(i, i)] += r;
        }
        let chol = a.cholesky()?;
        let l = chol.l_dirty();
        let min_pivot = (0..m).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if !(min_pivot > PIVOT_REL_TOL * max_diag) {
            return None;
        }
        let inv = chol.inverse();
        Some((&inv + inv.transpose()) * 0.5)
    };
    if let Some(g) = attempt(reg) {
        return Some((g, reg));
    }
    if reg == 0.0 {
        return None;
    }
    let mut jitter = JITTER_START;
    for _ in 0..JITTER_ESCALATIONS {
        if let Some(g) = attempt(reg + jitter) {
            log::warn!("kernel matrix needed jitter {jitter:e}");
            return Some((g, reg + jitter));
        }
        jitter *= 10.0;
    }
    None
}

/// Estimates `‖f‖` in the kernel's RKHS as the norm of the minimum-norm
/// interpolant of `values` at `points`, `sqrt(yᵀ (K + jitter·I)⁻¹ y)`.
///
/// This is a lower bound on the true norm that increases as the point set
/// densifies.
pub fn rkhs_norm_estimate(
    kernel: &KernelSpec,
    points: &[Vec<f64>],
    values: &[f64],
    jitter: f64,
) -> Result<f64, GpError> {
    let feats: Vec<Vec<f64>> = points.iter().map(|x| kernel.features(x)).collect();
    let mut k = kernel.gram(&feats);
    for i in 0..points.len() {
        k[(i, i)] += jitter;
    }
    let chol = k.cholesky().ok_or(GpError::Singular { action: 0 })?;
    let y = DVector::from_column_slice(values);
    let z = chol.solve(&y);
    Ok(y.dot(&z).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_point(noise_std: f64) -> Regressor {
        let data = Dataset::new(
            1,
            0.01,
            vec![ActionSamples {
                inputs: vec![vec![0.3]],
                outputs: vec![vec![1.7]],
            }],
        )
        .unwrap();
        let kernel = KernelSpec::squared_exponential(2.0, 0.5).unwrap();
        let cfg = FitConfig {
            noise_std,
            budget: 1,
            rkhs_bounds: vec![1.0],
            gamma: None,
            prior_mean: PriorMean::Zero,
            seed: 0,
        };
        Regressor::fit(&data, &kernel, &cfg).unwrap()
    }

    #[test]
    fn single_point_interpolates_without_noise() {
        let reg = one_point(0.0);
        assert_eq!(reg.posterior_mean(0, &[0.3]).unwrap(), vec![1.7]);
        assert_eq!(reg.posterior_var(0, &[0.3]).unwrap(), 0.0);
    }

    #[test]
    fn single_point_shrinks_with_noise() {
        let reg = one_point(0.5);
        let mu = reg.posterior_mean(0, &[0.3]).unwrap()[0];
        let expect = 1.7 * 2.0 / (2.0 + 0.25);
        assert!((mu - expect).abs() < 1e-14);
    }

    #[test]
    fn duplicate_inputs_without_noise_are_singular() {
        let data = Dataset::new(
            1,
            0.01,
            vec![ActionSamples {
                inputs: vec![vec![0.0], vec![0.0]],
                outputs: vec![vec![1.0], vec![1.0]],
            }],
        )
        .unwrap();
        let kernel = KernelSpec::squared_exponential(1.0, 1.0).unwrap();
        let cfg = FitConfig {
            noise_std: 0.0,
            budget: 2,
            rkhs_bounds: vec![1.0],
            gamma: None,
            prior_mean: PriorMean::Zero,
            seed: 0,
        };
        assert_eq!(
            Regressor::fit(&data, &kernel, &cfg).unwrap_err(),
            GpError::Singular { action: 0 }
        );
    }

    #[test]
    fn gamma_above_bound_is_rejected() {
        let data = Dataset::new(
            1,
            0.01,
            vec![ActionSamples {
                inputs: vec![vec![0.0]],
                outputs: vec![vec![1.0]],
            }],
        )
        .unwrap();
        let kernel = KernelSpec::squared_exponential(1.0, 1.0).unwrap();
        let cfg = FitConfig {
            noise_std: 0.1,
            budget: 1,
            rkhs_bounds: vec![1.0],
            gamma: Some(vec![1.5]),
            prior_mean: PriorMean::Zero,
            seed: 0,
        };
        assert!(matches!(
            Regressor::fit(&data, &kernel, &cfg),
            Err(GpError::InconsistentRkhsBound { .. })
        ));
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let reg = one_point(0.1);
        let v = reg.posterior_var(0, &[1e3]).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
        // λ_x vanishes and γ = 0, so ε = sqrt(σ_s)·B.
        let e = reg.error_bound(0, &[1e3], 0.05).unwrap()[0];
        assert!((e - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn gamma_equal_to_bound_cancels_variance_term() {
        let data = Dataset::new(
            1,
            0.01,
            vec![ActionSamples {
                inputs: vec![vec![0.0], vec![1.0]],
                outputs: vec![vec![1.0], vec![0.5]],
            }],
        )
        .unwrap();
        let kernel = KernelSpec::squared_exponential(1.0, 1.0).unwrap();
        let cfg = FitConfig {
            noise_std: 0.1,
            budget: 2,
            rkhs_bounds: vec![2.0],
            gamma: Some(vec![4.0]),
            prior_mean: PriorMean::Zero,
            seed: 0,
        };
        let reg = Regressor::fit(&data, &kernel, &cfg).unwrap();
        let x = [0.4];
        let s = reg.point_stats(0, &x).unwrap();
        let lambda = 4.0 * 0.01f64.powi(2) * s.weight_norm.powi(2);
        let expect = (lambda / 2.0 * (2.0f64 / 0.05).ln()).sqrt();
        let got = reg.error_bound(0, &x, 0.05).unwrap()[0];
        assert!((got - expect).abs() < 1e-15);
    }

    #[test]
    fn delta_outside_unit_interval_is_rejected() {
        let reg = one_point(0.1);
        assert_eq!(
            reg.error_bound(0, &[0.0], 1.0).unwrap_err(),
            GpError::InvalidDelta(1.0)
        );
        assert!(reg.error_bound(0, &[0.0], 0.0).is_err());
    }

    #[test]
    fn feature_map_round_trips_through_toml() {
        let text = r#"
            [[layers]]
            weights = [[1.0, 0.5], [0.0, -1.0], [0.2, 0.2]]
            bias = [0.0, 0.1, -0.1]
            activation = "tanh"

            [[layers]]
            weights = [[1.0, 0.0, 1.0]]
            bias = [0.0]
            activation = "identity"
        "#;
        let fm = FeatureMap::from_toml_str(text).unwrap();
        assert_eq!(fm.input_dim(), 2);
        assert_eq!(fm.output_dim(), 1);
        let bad = "[[layers]]\nweights = [[1.0]]\nbias = [0.0, 1.0]\nactivation = \"tanh\"\n";
        assert!(FeatureMap::from_toml_str(bad).is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let data = Dataset::new(
            2,
            0.01,
            vec![
                ActionSamples {
                    inputs: vec![vec![0.1, -0.2]],
                    outputs: vec![vec![0.3, 1.0 / 3.0]],
                },
                ActionSamples {
                    inputs: vec![vec![1.5, 2.0], vec![0.0, 0.0]],
                    outputs: vec![vec![-1e-17, 7.25], vec![0.5, 0.5]],
                },
            ],
        )
        .unwrap();
        let back = Dataset::from_csv(&data.to_csv()).unwrap();
        assert_eq!(back, data);
    }
}
