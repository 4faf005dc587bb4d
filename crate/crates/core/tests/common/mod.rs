//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use dshield::abstraction::{Imdp, ImdpRow};
use dshield::geometry::Label;
use dshield::gp::{ActionSamples, Dataset, FitConfig, KernelSpec, PriorMean};
use dshield::ltl::Formula;
use dshield::shield::ProductImdp;
use rand::Rng;

// ---------------------------------------------------------------- GP oracle

/// Gauss-Jordan inverse with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, p);
        let d = m[c][c];
        assert!(d.abs() > 1e-300, "singular matrix");
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn se(x: &[f64], y: &[f64], sig: f64, ell: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    sig * (-d2 / (2.0 * ell * ell)).exp()
}

/// Posterior mean per output and shared variance from a dense solve.
pub fn dense_posterior(
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    x: &[f64],
    sig: f64,
    ell: f64,
    noise_var: f64,
    identity_prior: bool,
) -> (Vec<f64>, f64) {
    let m = xs.len();
    let k: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| se(&xs[i], &xs[j], sig, ell) + if i == j { noise_var } else { 0.0 })
                .collect()
        })
        .collect();
    let inv = gauss_jordan_inverse(&k);
    let kx: Vec<f64> = xs.iter().map(|xi| se(x, xi, sig, ell)).collect();
    let gk: Vec<f64> = (0..m).map(|i| (0..m).map(|j| inv[i][j] * kx[j]).sum()).collect();
    let var = sig - kx.iter().zip(&gk).map(|(a, b)| a * b).sum::<f64>();
    let n = ys[0].len();
    let mean = (0..n)
        .map(|d| {
            let prior = |p: &[f64]| if identity_prior { p[d] } else { 0.0 };
            prior(x)
                + (0..m)
                    .map(|i| gk[i] * (ys[i][d] - prior(&xs[i])))
                    .sum::<f64>()
        })
        .collect();
    (mean, var)
}

pub struct GpInstance {
    pub data: Dataset,
    pub kernel: KernelSpec,
    pub cfg: FitConfig,
    pub sig: f64,
    pub ell: f64,
}

/// Random single-action regression problem on `[-2, 2]^n`; keeps every sample.
pub fn random_gp_instance<R: Rng>(rng: &mut R, m: usize, n: usize) -> GpInstance {
    let sig = rng.gen_range(0.5..2.0);
    let ell = rng.gen_range(0.5..2.0);
    let noise_std = rng.gen_range(0.1..0.5);
    let identity = rng.gen_bool(0.5);
    let mut s = ActionSamples::default();
    for _ in 0..m {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|d| x[d] + 0.3 * (x[(d + 1) % n] * 1.3).sin() + rng.gen_range(-0.05..0.05))
            .collect();
        s.inputs.push(x);
        s.outputs.push(y);
    }
    GpInstance {
        data: Dataset::new(n, 0.05, vec![s]).unwrap(),
        kernel: KernelSpec::squared_exponential(sig, ell).unwrap(),
        cfg: FitConfig {
            noise_std,
            budget: m,
            rkhs_bounds: vec![1.0; n],
            gamma: None,
            prior_mean: if identity { PriorMean::Identity } else { PriorMean::Zero },
            seed: rng.gen(),
        },
        sig,
        ell,
    }
}

// --------------------------------------------------------------- LTL oracle

/// Truth of `f` at every position of the lasso word `prefix · loop^ω`.
/// Position `prefix.len() + loop.len() - 1` is followed by `prefix.len()`.
pub fn lasso_eval(f: &Formula, prefix: &[u32], cycle: &[u32]) -> bool {
    assert!(!cycle.is_empty());
    let word: Vec<u32> = prefix.iter().chain(cycle).copied().collect();
    lasso_values(f, &word, prefix.len())[0]
}

fn lasso_values(f: &Formula, word: &[u32], loop_start: usize) -> Vec<bool> {
    let n = word.len();
    let succ = |i: usize| if i + 1 < n { i + 1 } else { loop_start };
    // positions visited from i in `steps` steps, i included
    let walk = |i: usize, steps: u32| {
        let mut out = vec![i];
        let mut j = i;
        for _ in 0..steps {
            j = succ(j);
            out.push(j);
        }
        out
    };
    match f {
        Formula::True => vec![true; n],
        Formula::False => vec![false; n],
        Formula::Atom(p) => word.iter().map(|l| l >> p & 1 == 1).collect(),
        Formula::NotAtom(p) => word.iter().map(|l| l >> p & 1 == 0).collect(),
        Formula::And(v) => {
            let vals: Vec<Vec<bool>> = v.iter().map(|g| lasso_values(g, word, loop_start)).collect();
            (0..n).map(|i| vals.iter().all(|x| x[i])).collect()
        }
        Formula::Or(v) => {
            let vals: Vec<Vec<bool>> = v.iter().map(|g| lasso_values(g, word, loop_start)).collect();
            (0..n).map(|i| vals.iter().any(|x| x[i])).collect()
        }
        Formula::Next(g) => {
            let x = lasso_values(g, word, loop_start);
            (0..n).map(|i| x[succ(i)]).collect()
        }
        Formula::Always(g) => {
            let x = lasso_values(g, word, loop_start);
            (0..n).map(|i| x[i.min(loop_start)..].iter().all(|&b| b)).collect()
        }
        Formula::Eventually(g) => {
            let x = lasso_values(g, word, loop_start);
            (0..n).map(|i| x[i.min(loop_start)..].iter().any(|&b| b)).collect()
        }
        Formula::BoundedAlways(k, g) => {
            let x = lasso_values(g, word, loop_start);
            (0..n).map(|i| walk(i, *k).iter().all(|&j| x[j])).collect()
        }
        Formula::BoundedEventually(k, g) => {
            let x = lasso_values(g, word, loop_start);
            (0..n).map(|i| walk(i, *k).iter().any(|&j| x[j])).collect()
        }
        Formula::BoundedUntil(k, a, b) => {
            let xa = lasso_values(a, word, loop_start);
            let xb = lasso_values(b, word, loop_start);
            (0..n)
                .map(|i| {
                    for j in walk(i, *k) {
                        if xb[j] {
                            return true;
                        }
                        if !xa[j] {
                            return false;
                        }
                    }
                    false
                })
                .collect()
        }
        Formula::BoundedRelease(k, a, b) => {
            let xa = lasso_values(a, word, loop_start);
            let xb = lasso_values(b, word, loop_start);
            (0..n)
                .map(|i| {
                    for j in walk(i, *k) {
                        if !xb[j] {
                            return false;
                        }
                        if xa[j] {
                            return true;
                        }
                    }
                    true
                })
                .collect()
        }
    }
}

/// Finite-trace semantics. Past the end of the trace literals are false
/// under `strong` and true otherwise.
pub fn finite_eval(f: &Formula, trace: &[u32], i: usize, strong: bool) -> bool {
    if i >= trace.len() {
        return beyond(f, strong);
    }
    let ev = |g: &Formula, j: usize| finite_eval(g, trace, j, strong);
    match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Atom(p) => trace[i] >> p & 1 == 1,
        Formula::NotAtom(p) => trace[i] >> p & 1 == 0,
        Formula::And(v) => v.iter().all(|g| ev(g, i)),
        Formula::Or(v) => v.iter().any(|g| ev(g, i)),
        Formula::Next(g) => ev(g, i + 1),
        Formula::Always(g) => (i..trace.len()).all(|j| ev(g, j)) && beyond(g, strong),
        Formula::Eventually(g) => (i..trace.len()).any(|j| ev(g, j)) || beyond(g, strong),
        Formula::BoundedAlways(k, g) => (i..=i + *k as usize).all(|j| ev(g, j)),
        Formula::BoundedEventually(k, g) => (i..=i + *k as usize).any(|j| ev(g, j)),
        Formula::BoundedUntil(k, a, b) => {
            for j in i..=i + *k as usize {
                if ev(b, j) {
                    return true;
                }
                if !ev(a, j) {
                    return false;
                }
            }
            false
        }
        Formula::BoundedRelease(k, a, b) => {
            for j in i..=i + *k as usize {
                if !ev(b, j) {
                    return false;
                }
                if ev(a, j) {
                    return true;
                }
            }
            true
        }
    }
}

fn beyond(f: &Formula, strong: bool) -> bool {
    match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Atom(_) | Formula::NotAtom(_) => !strong,
        Formula::And(v) => v.iter().all(|g| beyond(g, strong)),
        Formula::Or(v) => v.iter().any(|g| beyond(g, strong)),
        Formula::Next(g)
        | Formula::Always(g)
        | Formula::Eventually(g)
        | Formula::BoundedAlways(_, g)
        | Formula::BoundedEventually(_, g) => beyond(g, strong),
        Formula::BoundedUntil(_, _, b) | Formula::BoundedRelease(_, _, b) => beyond(b, strong),
    }
}

/// Random safe formula (no unbounded eventually) over `atoms` propositions
/// with temporal depth at most `depth`.
pub fn random_safe_formula<R: Rng>(rng: &mut R, atoms: usize, depth: usize, size: usize) -> Formula {
    let lit = |rng: &mut R| {
        let p = rng.gen_range(0..atoms);
        if rng.gen_bool(0.5) {
            Formula::Atom(p)
        } else {
            Formula::NotAtom(p)
        }
    };
    if size <= 1 {
        return lit(rng);
    }
    let choice = rng.gen_range(0..9);
    let k_max = depth.min(2) as u32;
    match choice {
        0 | 1 => {
            let a = random_safe_formula(rng, atoms, depth, size / 2);
            let b = random_safe_formula(rng, atoms, depth, size - size / 2);
            if choice == 0 {
                Formula::and(vec![a, b])
            } else {
                Formula::or(vec![a, b])
            }
        }
        2 if depth >= 1 => Formula::next(random_safe_formula(rng, atoms, depth - 1, size - 1)),
        3 if depth >= 1 => Formula::always(random_safe_formula(rng, atoms, depth - 1, size - 1)),
        4 if k_max >= 1 => {
            let k = rng.gen_range(1..=k_max);
            Formula::bounded_always(k, random_safe_formula(rng, atoms, depth - k as usize, size - 1))
        }
        5 if k_max >= 1 => {
            let k = rng.gen_range(1..=k_max);
            Formula::bounded_eventually(
                k,
                random_safe_formula(rng, atoms, depth - k as usize, size - 1),
            )
        }
        6 | 7 if k_max >= 1 => {
            let k = rng.gen_range(1..=k_max);
            let d = depth - k as usize;
            let a = random_safe_formula(rng, atoms, d, size / 2);
            let b = random_safe_formula(rng, atoms, d, size - size / 2);
            if choice == 6 {
                Formula::until(k, a, b)
            } else {
                Formula::release(k, a, b)
            }
        }
        _ => lit(rng),
    }
}

/// Calls `f` on every word of length `len` over `letters` letters.
pub fn for_each_word(letters: u32, len: usize, mut f: impl FnMut(&[u32])) {
    let mut w = vec![0u32; len];
    loop {
        f(&w);
        let mut i = 0;
        loop {
            if i == len {
                return;
            }
            w[i] += 1;
            if w[i] < letters {
                break;
            }
            w[i] = 0;
            i += 1;
        }
    }
}

// ------------------------------------------------------------ shield oracle

/// `max Σ Δ v` over the row polytope by LP duality:
/// `min_λ λ + Σ_i max(hi_i (v_i − λ), lo_i (v_i − λ))`, attained at some `v_i`.
pub fn omax_dual(bounds: &[(f64, f64)], v: &[f64]) -> f64 {
    v.iter()
        .map(|&lam| {
            lam + bounds
                .iter()
                .zip(v)
                .map(|(&(lo, hi), &vi)| (hi * (vi - lam)).max(lo * (vi - lam)))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Max over every vertex of the row polytope, one vertex per fill order.
pub fn omax_vertices(bounds: &[(f64, f64)], v: &[f64]) -> f64 {
    let n = bounds.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::NEG_INFINITY;
    permutations(&mut perm, 0, &mut |order| {
        let mut d: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        let mut rest = 1.0 - d.iter().sum::<f64>();
        for &i in order {
            let add = (bounds[i].1 - bounds[i].0).min(rest).max(0.0);
            d[i] += add;
            rest -= add;
        }
        best = best.max(d.iter().zip(v).map(|(a, b)| a * b).sum());
    });
    best
}

fn permutations(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permutations(p, k + 1, f);
        p.swap(k, i);
    }
}

/// Random feasible interval row over `n` targets: a point distribution on a
/// random support, widened by random margins.
pub fn random_row<R: Rng>(rng: &mut R, n: usize) -> Vec<(usize, f64, f64)> {
    let mut support: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
    if support.is_empty() {
        support.push(rng.gen_range(0..n));
    }
    let w: Vec<f64> = support.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    support
        .iter()
        .zip(&w)
        .map(|(&t, &wi)| {
            let p = wi / total;
            if rng.gen_bool(0.2) {
                (t, p, p)
            } else {
                (t, (p - rng.gen_range(0.0..0.3)).max(0.0), (p + rng.gen_range(0.0..0.3)).min(1.0))
            }
        })
        .collect()
}

/// Random IMDP with propositions `ap`; each state gets a random label.
pub fn random_imdp<R: Rng>(rng: &mut R, states: usize, actions: usize, ap: &[&str]) -> Imdp {
    let labels: Vec<Label> = (0..states)
        .map(|_| (0..ap.len()).fold(0, |l, i| if rng.gen_bool(0.3) { l | 1 << i } else { l }))
        .collect();
    let rows = (0..states * actions)
        .map(|_| ImdpRow::new(random_row(rng, states), 0.0))
        .collect();
    Imdp::new(actions, ap.iter().map(|s| s.to_string()).collect(), labels, rows).unwrap()
}

fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        let d = a[c][c];
        assert!(d.abs() > 1e-14, "singular reachability system");
        for r in c + 1..n {
            let f = a[r][c] / d;
            if f != 0.0 {
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Worst-case probability of reaching an accepting product state under the
/// stationary policy `pi`, by adversary strategy improvement with exact
/// Markov-chain solves. The result is checked against the Bellman equation
/// with the dual o-max.
pub fn robust_policy_value(prod: &ProductImdp, pi: &[usize]) -> Vec<f64> {
    let n = prod.num_states();
    let rows: Vec<Vec<(usize, f64, f64)>> = (0..n).map(|s| prod.successors(s, pi[s])).collect();
    let mut v: Vec<f64> = (0..n).map(|s| if prod.is_accepting(s) { 1.0 } else { 0.0 }).collect();
    for _ in 0..1000 {
        // adversary: fill lower bounds, then the rest by decreasing value
        let dists: Vec<Vec<(usize, f64)>> = rows
            .iter()
            .map(|row| {
                let mut d: Vec<(usize, f64)> = row.iter().map(|e| (e.0, e.1)).collect();
                let mut rest = 1.0 - d.iter().map(|e| e.1).sum::<f64>();
                let mut order: Vec<usize> = (0..row.len()).collect();
                order.sort_by(|&i, &j| v[row[j].0].total_cmp(&v[row[i].0]).then(i.cmp(&j)));
                for i in order {
                    let add = (row[i].2 - row[i].1).min(rest).max(0.0);
                    d[i].1 += add;
                    rest -= add;
                }
                d
            })
            .collect();
        // states that can reach an accepting one under these distributions
        let mut reach: Vec<bool> = (0..n).map(|s| prod.is_accepting(s)).collect();
        loop {
            let mut changed = false;
            for s in 0..n {
                if !reach[s] && dists[s].iter().any(|&(t, p)| p > 0.0 && reach[t]) {
                    reach[s] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let unknown: Vec<usize> = (0..n).filter(|&s| reach[s] && !prod.is_accepting(s)).collect();
        let pos = |s: usize| unknown.iter().position(|&u| u == s);
        let mut a = vec![vec![0.0; unknown.len()]; unknown.len()];
        let mut b = vec![0.0; unknown.len()];
        for (r, &s) in unknown.iter().enumerate() {
            a[r][r] += 1.0;
            for &(t, p) in &dists[s] {
                if prod.is_accepting(t) {
                    b[r] += p;
                } else if let Some(c) = pos(t) {
                    a[r][c] -= p;
                }
            }
        }
        let x = solve_linear(a, b);
        let mut next: Vec<f64> = (0..n).map(|s| if prod.is_accepting(s) { 1.0 } else { 0.0 }).collect();
        for (r, &s) in unknown.iter().enumerate() {
            next[s] = x[r].clamp(0.0, 1.0);
        }
        let improved = next.iter().zip(&v).any(|(a, b)| *a > b + 1e-13);
        v = next;
        if !improved {
            break;
        }
    }
    for s in 0..n {
        let b: Vec<(f64, f64)> = rows[s].iter().map(|e| (e.1, e.2)).collect();
        let vals: Vec<f64> = rows[s].iter().map(|e| v[e.0]).collect();
        let bell = if prod.is_accepting(s) { 1.0 } else { omax_dual(&b, &vals) };
        assert!((bell - v[s]).abs() < 1e-9, "policy value is not a fixpoint at {s}: {bell} vs {}", v[s]);
    }
    v
}

/// `Q(s, a)` for the o-max adversary with values `v`, via the dual oracle.
pub fn q_oracle(prod: &ProductImdp, s: usize, a: usize, v: &[f64]) -> f64 {
    if prod.is_accepting(s) {
        return 1.0;
    }
    let row = prod.successors(s, a);
    let b: Vec<(f64, f64)> = row.iter().map(|e| (e.1, e.2)).collect();
    let vals: Vec<f64> = row.iter().map(|e| v[e.0]).collect();
    omax_dual(&b, &vals)
}

/// Calls `f` with every stationary policy picking from `masks[s]`.
pub fn for_each_policy(masks: &[u64], mut f: impl FnMut(&[usize])) {
    let choices: Vec<Vec<usize>> = masks
        .iter()
        .map(|m| (0..64).filter(|a| m >> a & 1 == 1).collect())
        .collect();
    let mut idx = vec![0usize; masks.len()];
    let mut pi: Vec<usize> = choices.iter().map(|c| c[0]).collect();
    loop {
        f(&pi);
        let mut i = 0;
        loop {
            if i == idx.len() {
                return;
            }
            idx[i] += 1;
            if idx[i] < choices[i].len() {
                pi[i] = choices[i][idx[i]];
                break;
            }
            idx[i] = 0;
            pi[i] = choices[i][0];
            i += 1;
        }
    }
}

pub fn policy_count(masks: &[u64]) -> u128 {
    masks.iter().map(|m| m.count_ones() as u128).product()
}
