//! Expected-utility optimal continuous tests for a finite composite null
//! `H = {P_1, ..., P_k}` against a simple alternative `Q`, together with the
//! first-order-condition check, the reverse information projection, the
//! effective-null membership LP and the Rényi divergences that describe the
//! optimum.
//!
//! The solver works on the dual. For multipliers `y >= 0` the maximizer of
//! the Lagrangian is `eps_i(y) = U'^{-1}(s_i / q_i) ^ cap` with
//! `s_i = sum_j y_j P_j(i)`, and the dual gradient is `1 - E_{P_j}[eps(y)]`.
//! Active sets are enumerated from the smallest; on each one the equations
//! `ln E_{P_j}[eps(e^z)] = 0` are solved by Levenberg-Marquardt in
//! `z = ln y`, and the first set whose solution satisfies the remaining
//! constraints is accepted. Optimality is then certified independently by
//! the first-order-condition LP.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EtestError, Result};
use crate::evidence::{ContinuousTest, Level};
use crate::lp::{maximize, solve_square, BoxLp, LpOutcome, Method};
use crate::mc::substream;
use crate::measure::{dot_ext, FiniteDistribution, FiniteMeasure, MassFunction};
use crate::simple_opt::neyman_pearson;
use crate::utility::{legendre, Utility};

/// Default tolerance on the first-order-condition slack.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Default Levenberg-Marquardt iteration budget per active set.
pub const DEFAULT_MAX_ITER: usize = 500;

/// Number of seeded restarts.
pub const RESTARTS: usize = 3;

/// Largest composite null handled by active-set enumeration.
pub const MAX_MEMBERS: usize = 12;

/// A composite testing problem.
#[derive(Debug, Clone)]
pub struct CompositeProblem {
    nulls: Vec<FiniteDistribution>,
    q: FiniteDistribution,
    level: Level,
    utility: Utility,
}

impl CompositeProblem {
    /// Validates and builds a problem. Level 0 is only supported for
    /// `h <= 0` (or a custom utility with bounded `x U'(x)`).
    pub fn new(nulls: Vec<FiniteDistribution>, q: FiniteDistribution, level: Level, utility: Utility) -> Result<Self> {
        if nulls.is_empty() {
            return Err(EtestError::InvalidArgument("the null hypothesis is empty".into()));
        }
        for p in &nulls {
            p.check_same_space(q.outcomes())?;
        }
        if level.alpha() == 0.0 && utility.sup_x_derivative().is_none() {
            return Err(EtestError::Unsupported(
                "level 0 with a composite null needs h <= 0 (x U'(x) bounded)".into(),
            ));
        }
        if !utility.is_strictly_concave() && utility.h() != Some(1.0) {
            return Err(EtestError::NonInvertible);
        }
        Ok(Self {
            nulls,
            q,
            level,
            utility,
        })
    }

    /// Null members.
    pub fn nulls(&self) -> &[FiniteDistribution] {
        &self.nulls
    }

    /// Alternative.
    pub fn q(&self) -> &FiniteDistribution {
        &self.q
    }

    /// Level.
    pub fn level(&self) -> Level {
        self.level
    }

    /// Utility.
    pub fn utility(&self) -> &Utility {
        &self.utility
    }

    fn outcomes(&self) -> &[String] {
        self.q.outcomes()
    }

    /// Outcomes charged by Q but by no null member; the optimum puts the cap there.
    fn free(&self) -> Vec<bool> {
        (0..self.q.len())
            .map(|i| self.q.probs()[i] > 0.0 && self.nulls.iter().all(|p| p.probs()[i] == 0.0))
            .collect()
    }
}

/// Output of [`solve_composite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeSolution {
    /// The optimal test.
    pub test: ContinuousTest,
    /// `E_Q[U(test)]`.
    #[serde(with = "crate::ext_float")]
    pub objective: f64,
    /// Multiplier of each null constraint (empty at `h = 1`).
    pub dual: Vec<f64>,
    /// Indices of binding null members.
    pub active: Vec<usize>,
    /// The reverse information projection, when the test is positive on Q's support.
    pub ripr: Option<FiniteMeasure>,
    /// `E_Q[U'(test) test]`.
    #[serde(with = "crate::ext_float")]
    pub lambda: f64,
    /// First-order-condition slack.
    #[serde(with = "crate::ext_float")]
    pub foc_slack: f64,
    /// Largest disagreement between restarts on Q's support.
    pub restart_spread: f64,
    /// Levenberg-Marquardt iterations of the accepted run.
    pub iterations: usize,
    /// Diagnostics.
    pub notes: Vec<String>,
}

impl CompositeSolution {
    /// Test values.
    pub fn values(&self) -> &[f64] {
        self.test.values().expect("composite solutions are tabulated")
    }
}

fn logsumexp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-scale data of the dual map `y -> eps(y)`.
struct DualMap<'a> {
    prob: &'a CompositeProblem,
    ln_p: Vec<Vec<f64>>,
    ln_q: Vec<f64>,
    ln_cap: f64,
}

struct Eval {
    /// `ln E_{P_j}[eps]` for every member.
    f: Vec<f64>,
    /// Jacobian rows for the active members, columns for the active set.
    jac: Vec<Vec<f64>>,
    ln_eps: Vec<f64>,
}

impl<'a> DualMap<'a> {
    fn new(prob: &'a CompositeProblem) -> Self {
        Self {
            ln_p: prob.nulls.iter().map(|p| p.probs().iter().map(|x| x.ln()).collect()).collect(),
            ln_q: prob.q.probs().iter().map(|x| x.ln()).collect(),
            ln_cap: prob.level.cap().ln(),
            prob,
        }
    }

    fn eval(&self, set: &[usize], z: &[f64], want_jac: bool) -> Eval {
        let n = self.ln_q.len();
        let u = &self.prob.utility;
        let mut ln_eps = vec![f64::NEG_INFINITY; n];
        let mut elast = vec![0.0; n];
        let mut weights = vec![vec![0.0; set.len()]; n];
        for i in 0..n {
            if self.ln_q[i] == f64::NEG_INFINITY {
                continue;
            }
            let ln_s = logsumexp(set.iter().zip(z).map(|(&j, zj)| zj + self.ln_p[j][i]));
            let t = ln_s - self.ln_q[i];
            let raw = u.ln_inverse_derivative_exp(t);
            if raw >= self.ln_cap {
                ln_eps[i] = self.ln_cap;
            } else {
                ln_eps[i] = raw;
                elast[i] = u.inverse_derivative_elasticity(t);
                if want_jac {
                    for (k, (&j, zj)) in set.iter().zip(z).enumerate() {
                        weights[i][k] = (zj + self.ln_p[j][i] - ln_s).exp();
                    }
                }
            }
        }
        let f: Vec<f64> = self
            .ln_p
            .iter()
            .map(|lp| logsumexp(lp.iter().zip(&ln_eps).map(|(a, b)| if *a == f64::NEG_INFINITY { *a } else { a + b })))
            .collect();
        let mut jac = vec![];
        if want_jac {
            for &j in set {
                let row = (0..set.len())
                    .map(|k| {
                        (0..n)
                            .filter(|&i| elast[i] != 0.0 && self.ln_p[j][i] > f64::NEG_INFINITY)
                            .map(|i| (self.ln_p[j][i] + ln_eps[i] - f[j]).exp() * elast[i] * weights[i][k])
                            .sum()
                    })
                    .collect();
                jac.push(row);
            }
        }
        Eval { f, jac, ln_eps }
    }

    fn residual(&self, set: &[usize], e: &Eval) -> f64 {
        set.iter().map(|&j| e.f[j].abs()).fold(0.0, f64::max)
    }

    /// Shifts `z` by a common constant so that the largest active residual is 0.
    fn prescale(&self, set: &[usize], z0: &[f64]) -> Option<Vec<f64>> {
        let worst = |t: f64| {
            let z: Vec<f64> = z0.iter().map(|v| v + t).collect();
            let e = self.eval(set, &z, false);
            set.iter().map(|&j| e.f[j]).fold(f64::NEG_INFINITY, f64::max)
        };
        let (mut lo, mut hi) = (0.0, 0.0);
        let mut step = 1.0;
        if worst(0.0) > 0.0 {
            loop {
                hi += step;
                step *= 2.0;
                if worst(hi) <= 0.0 {
                    break;
                }
                if hi > 1e4 {
                    return None;
                }
            }
        } else {
            loop {
                lo -= step;
                step *= 2.0;
                if worst(lo) > 0.0 {
                    break;
                }
                if lo < -1e4 {
                    return None;
                }
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if worst(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(z0.iter().map(|v| v + hi).collect())
    }

    /// Levenberg-Marquardt on the active equations.
    fn solve_set(&self, set: &[usize], z0: &[f64], max_iter: usize) -> Option<(Vec<f64>, Eval, usize)> {
        let mut z = self.prescale(set, z0)?;
        let mut e = self.eval(set, &z, true);
        if set.iter().any(|&j| !e.f[j].is_finite()) {
            return None;
        }
        let k = set.len();
        let mut mu = 1e-3;
        let mut res = self.residual(set, &e);
        for it in 0..max_iter {
            if res <= 1e-13 {
                return Some((z, e, it));
            }
            let fvec: Vec<f64> = set.iter().map(|&j| e.f[j]).collect();
            let jtj: Vec<Vec<f64>> = (0..k)
                .map(|a| (0..k).map(|b| (0..k).map(|r| e.jac[r][a] * e.jac[r][b]).sum()).collect())
                .collect();
            let jtf: Vec<f64> = (0..k).map(|a| (0..k).map(|r| e.jac[r][a] * fvec[r]).sum()).collect();
            let scale = (0..k).map(|a| jtj[a][a]).fold(0.0, f64::max).max(1e-300);
            let mut accepted = false;
            while mu < 1e16 {
                let m: Vec<Vec<f64>> = (0..k)
                    .map(|a| (0..k).map(|b| (jtj[a][b] + if a == b { mu * scale } else { 0.0 }) / scale).collect())
                    .collect();
                let rhs: Vec<f64> = jtf.iter().map(|v| -v / scale).collect();
                let Some(delta) = solve_square(m, rhs) else {
                    mu *= 4.0;
                    continue;
                };
                let cand: Vec<f64> = z.iter().zip(&delta).map(|(a, b)| a + b).collect();
                let ce = self.eval(set, &cand, true);
                let cres = self.residual(set, &ce);
                if cres.is_finite() && cres < res {
                    z = cand;
                    e = ce;
                    res = cres;
                    mu = (mu / 3.0).max(1e-12);
                    accepted = true;
                    break;
                }
                mu *= 4.0;
            }
            if !accepted || z.iter().any(|v| *v < -700.0) {
                return (res <= 1e-10).then_some((z, e, it));
            }
        }
        (res <= 1e-10).then_some((z, e, max_iter))
    }
}

/// Dual objective with its gradient and Hessian in `y`.
struct DualEval {
    g: f64,
    grad: Vec<f64>,
    hess: Vec<Vec<f64>>,
    ln_eps: Vec<f64>,
}

impl DualMap<'_> {
    /// `g(y) = sum_i [q_i U(eps_i) - s_i eps_i] + sum_j y_j`, convex in `y`.
    /// Returns `None` where `g = +inf`, i.e. when an outcome charged by Q and
    /// by some member gets no dual weight at level 0.
    fn dual(&self, y: &[f64]) -> Option<DualEval> {
        let prob = self.prob;
        let (n, k) = (self.ln_q.len(), y.len());
        let cap = prob.level.cap();
        let u = &prob.utility;
        let mut g: f64 = y.iter().sum();
        let mut ln_eps = vec![f64::NEG_INFINITY; n];
        let mut hess = vec![vec![0.0; k]; k];
        for i in 0..n {
            if self.ln_q[i] == f64::NEG_INFINITY {
                continue;
            }
            let s: f64 = (0..k).map(|j| y[j] * prob.nulls[j].probs()[i]).sum();
            let charged = prob.nulls.iter().any(|p| p.probs()[i] > 0.0);
            if s <= 0.0 {
                if charged && cap.is_infinite() {
                    return None;
                }
                ln_eps[i] = self.ln_cap;
                if cap.is_finite() {
                    g += prob.q.probs()[i] * u.value(cap);
                }
                continue;
            }
            let ln_s = s.ln();
            let t = ln_s - self.ln_q[i];
            let raw = u.ln_inverse_derivative_exp(t);
            let q = prob.q.probs()[i];
            if raw >= self.ln_cap {
                ln_eps[i] = self.ln_cap;
                g += q * u.value(cap) - s * cap;
            } else {
                ln_eps[i] = raw;
                g += q * u.value_exp(raw) - (ln_s + raw).exp();
                let curv = (raw - ln_s).exp() * u.inverse_derivative_elasticity(t).abs();
                for a in 0..k {
                    let pa = prob.nulls[a].probs()[i];
                    if pa == 0.0 {
                        continue;
                    }
                    for b in 0..k {
                        hess[a][b] += pa * prob.nulls[b].probs()[i] * curv;
                    }
                }
            }
        }
        if !g.is_finite() {
            return None;
        }
        let grad = prob
            .nulls
            .iter()
            .map(|p| {
                1.0 - p
                    .probs()
                    .iter()
                    .zip(&ln_eps)
                    .filter(|(pi, _)| **pi > 0.0)
                    .map(|(pi, l)| pi * l.exp())
                    .sum::<f64>()
            })
            .collect();
        Some(DualEval { g, grad, hess, ln_eps })
    }

    /// Projected Newton descent on the dual over `y >= 0`.
    fn newton(&self, mut y: Vec<f64>, max_iter: usize) -> Option<(Vec<f64>, DualEval, usize)> {
        let k = y.len();
        let mut cur = self.dual(&y)?;
        for it in 0..max_iter {
            let pg = (0..k)
                .map(|j| (y[j] - (y[j] - cur.grad[j]).max(0.0)).abs())
                .fold(0.0, f64::max);
            if pg <= 1e-15 {
                return Some((y, cur, it));
            }
            let delta = pg.min(1e-6);
            let bound: Vec<bool> = (0..k).map(|j| y[j] <= delta && cur.grad[j] > 0.0).collect();
            let free: Vec<usize> = (0..k).filter(|&j| !bound[j]).collect();
            let mut dir: Vec<f64> = cur.grad.iter().map(|v| -v).collect();
            if !free.is_empty() {
                let diag = free.iter().map(|&j| cur.hess[j][j]).fold(0.0, f64::max);
                let tau = 1e-12 * diag.max(1e-300);
                let m: Vec<Vec<f64>> = free
                    .iter()
                    .map(|&a| free.iter().map(|&b| (cur.hess[a][b] + if a == b { tau } else { 0.0 }) / diag.max(1e-300)).collect())
                    .collect();
                let rhs: Vec<f64> = free.iter().map(|&a| -cur.grad[a] / diag.max(1e-300)).collect();
                if let Some(d) = solve_square(m, rhs) {
                    for (&j, v) in free.iter().zip(d) {
                        dir[j] = v;
                    }
                }
            }
            let try_dir = |dir: &[f64]| -> Option<(Vec<f64>, DualEval)> {
                let mut beta = 1.0;
                for _ in 0..80 {
                    let cand: Vec<f64> = (0..k).map(|j| (y[j] + beta * dir[j]).max(0.0)).collect();
                    if let Some(e) = self.dual(&cand) {
                        let decrease: f64 = (0..k).map(|j| cur.grad[j] * (cand[j] - y[j])).sum();
                        if e.g <= cur.g + 1e-4 * decrease && e.g <= cur.g {
                            return Some((cand, e));
                        }
                    }
                    beta *= 0.5;
                }
                None
            };
            let grad_dir: Vec<f64> = cur.grad.iter().map(|v| -v).collect();
            match try_dir(&dir).or_else(|| try_dir(&grad_dir)) {
                Some((ny, ne)) => {
                    let stalled = ny == y;
                    y = ny;
                    cur = ne;
                    if stalled {
                        return Some((y, cur, it));
                    }
                }
                None => return Some((y, cur, it)),
            }
        }
        Some((y, cur, max_iter))
    }
}

struct RunResult {
    values: Vec<f64>,
    ln_eps: Vec<f64>,
    objective: f64,
    dual: Vec<f64>,
    active: Vec<usize>,
    iterations: usize,
    kkt: bool,
}

fn subsets_by_size(k: usize) -> Vec<Vec<usize>> {
    let mut all: Vec<Vec<usize>> = (0u32..(1 << k))
        .map(|mask| (0..k).filter(|j| mask >> j & 1 == 1).collect())
        .collect();
    all.sort_by_key(|s: &Vec<usize>| s.len());
    all
}

fn run_once(prob: &CompositeProblem, map: &DualMap, start: usize, seed: u64, max_iter: usize) -> Result<RunResult> {
    let k = prob.nulls.len();
    let mut rng = substream(seed, start as u64);
    let jitter: Vec<f64> = (0..k).map(|_| if start == 0 { 0.0 } else { rng.random_range(-1.0..1.0) }).collect();
    let kkt_result = |ln_eps: &[f64], dual: Vec<f64>, active: Vec<usize>, iterations: usize| {
        let (values, ln_eps) = finalize(prob, ln_eps);
        RunResult {
            objective: prob.utility.expected(prob.q.probs(), &values),
            values,
            ln_eps,
            dual,
            active,
            iterations,
            kkt: true,
        }
    };
    let y0: Vec<f64> = jitter.iter().map(|v| v.exp()).collect();
    if let Some((y, e, it)) = map.newton(y0, max_iter) {
        let active: Vec<usize> = (0..k).filter(|&j| y[j] > 0.0).collect();
        let kkt_within = |tol: f64| e.grad.iter().all(|gj| *gj >= -tol) && active.iter().all(|&j| e.grad[j].abs() <= tol);
        if kkt_within(1e-6) {
            // Newton stalls once the dual decrease drops below rounding;
            // polish the binding equations in log scale from its point and
            // keep the polish only if every constraint still holds.
            let z0: Vec<f64> = active.iter().map(|&j| y[j].ln()).collect();
            if let Some((z, pe, pit)) = (!active.is_empty()).then(|| map.solve_set(&active, &z0, max_iter)).flatten() {
                if pe.f.iter().all(|f| *f <= 1e-10) {
                    let mut dual = vec![0.0; k];
                    for (&j, zj) in active.iter().zip(&z) {
                        dual[j] = zj.exp();
                    }
                    return Ok(kkt_result(&pe.ln_eps, dual, active, it + pit));
                }
            }
            if kkt_within(1e-10) {
                return Ok(kkt_result(&e.ln_eps, y, active, it));
            }
        }
    }
    let mut fallback: Option<(f64, Vec<f64>, Vec<usize>, Vec<f64>, usize)> = None;
    for set in subsets_by_size(k) {
        let z0: Vec<f64> = set.iter().map(|&j| jitter[j]).collect();
        let (z, e, iterations) = if set.is_empty() {
            (vec![], map.eval(&[], &[], false), 0)
        } else {
            // A jittered start can stall where the Jacobian degenerates;
            // retry from the neutral start before giving up on the set.
            let neutral = vec![0.0; set.len()];
            match map
                .solve_set(&set, &z0, max_iter)
                .or_else(|| map.solve_set(&set, &neutral, max_iter))
            {
                Some(r) => r,
                None => continue,
            }
        };
        let violation = e.f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if violation <= 1e-10 {
            let mut dual = vec![0.0; k];
            for (&j, zj) in set.iter().zip(&z) {
                dual[j] = zj.exp();
            }
            return Ok(kkt_result(&e.ln_eps, dual, set, iterations));
        }
        if violation.is_finite() && fallback.as_ref().is_none_or(|f| violation < f.0) {
            fallback = Some((violation, e.ln_eps.clone(), set.clone(), z.clone(), iterations));
        }
    }
    let (_, ln_eps, set, z, iterations) = fallback
        .ok_or_else(|| EtestError::NonConvergence("no active set produced a finite solution".into()))?;
    let mut dual = vec![0.0; k];
    for (&j, zj) in set.iter().zip(&z) {
        dual[j] = zj.exp();
    }
    let (values, ln_eps) = finalize(prob, &ln_eps);
    Ok(RunResult {
        objective: prob.utility.expected(prob.q.probs(), &values),
        values,
        ln_eps,
        dual,
        active: set,
        iterations,
        kkt: false,
    })
}

/// Exponentiates and rescales so that every null expectation is at most 1.
fn finalize(prob: &CompositeProblem, ln_eps: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut ln_eps: Vec<f64> = ln_eps.iter().map(|v| v.min(prob.level.cap().ln())).collect();
    let mut values: Vec<f64> = ln_eps.iter().map(|v| v.exp().min(prob.level.cap())).collect();
    let worst = prob
        .nulls
        .iter()
        .map(|p| dot_ext(p.probs(), &values))
        .fold(0.0, f64::max);
    if worst > 1.0 {
        for (v, s) in values.iter_mut().zip(ln_eps.iter_mut()) {
            *v /= worst;
            *s -= worst.ln();
        }
    }
    (values, ln_eps)
}

fn lexicographically_less(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

/// Solves the composite problem from [`RESTARTS`] seeded starts and
/// certifies the result with the first-order-condition LP. Fails with a
/// non-convergence error when the slack exceeds `tol`.
pub fn solve_composite(prob: &CompositeProblem, tol: f64, max_iter: usize, seed: u64) -> Result<CompositeSolution> {
    if prob.nulls.len() > MAX_MEMBERS {
        return Err(EtestError::TooLarge(format!(
            "{} null members; at most {MAX_MEMBERS} are supported",
            prob.nulls.len()
        )));
    }
    if !prob.utility.is_strictly_concave() {
        return solve_linear(prob);
    }
    let map = DualMap::new(prob);
    let runs: Vec<Result<RunResult>> = (0..RESTARTS)
        .into_par_iter()
        .map(|s| run_once(prob, &map, s, seed, max_iter))
        .collect();
    let runs: Vec<RunResult> = runs.into_iter().collect::<Result<_>>()?;
    let qp = prob.q.probs();
    let mut spread: f64 = 0.0;
    for a in &runs {
        for b in &runs {
            for i in (0..qp.len()).filter(|&i| qp[i] > 0.0) {
                let (x, y) = (a.values[i], b.values[i]);
                if x != y {
                    spread = spread.max((x - y).abs() / x.abs().max(y.abs()).max(1.0));
                }
            }
        }
    }
    let best = runs
        .into_iter()
        .reduce(|acc, r| {
            let better = (r.kkt && !acc.kkt)
                || (r.kkt == acc.kkt
                    && (r.objective > acc.objective
                        || (r.objective == acc.objective && lexicographically_less(&r.values, &acc.values))));
            if better {
                r
            } else {
                acc
            }
        })
        .expect("at least one restart");
    let mut notes = vec![];
    if !best.kkt {
        notes.push("no active set met the KKT conditions; returning the least-violating solution rescaled to validity".into());
    }
    let foc_slack = foc_ln(&best.ln_eps, prob)?;
    if !(foc_slack <= tol) {
        return Err(EtestError::NonConvergence(format!(
            "first-order-condition slack {foc_slack:e} exceeds {tol:e}"
        )));
    }
    let ripr = ripr_ln(&best.ln_eps, prob).ok();
    let lambda = lambda_ln(&best.ln_eps, prob);
    Ok(CompositeSolution {
        test: ContinuousTest::tabulated(prob.level, prob.outcomes().to_vec(), best.values)?,
        objective: best.objective,
        dual: best.dual,
        active: best.active,
        ripr,
        lambda,
        foc_slack,
        restart_spread: spread,
        iterations: best.iterations,
        notes,
    })
}

/// The linear utility: maximize power by LP.
fn solve_linear(prob: &CompositeProblem) -> Result<CompositeSolution> {
    if prob.level.alpha() == 0.0 {
        return Err(EtestError::ExistenceFailure("a linear utility has no optimal level-0 test".into()));
    }
    let values = if prob.nulls.len() == 1 {
        neyman_pearson(&prob.nulls[0], &prob.q, prob.level.alpha())?
            .test
            .values()
            .expect("tabulated")
            .to_vec()
    } else {
        match maximize(&valid_test_lp(prob, prob.q.probs().to_vec()), Method::Auto)? {
            LpOutcome::Optimal { x, .. } => x,
            LpOutcome::Unbounded => unreachable!("the cap bounds every coordinate"),
        }
    };
    let power = dot_ext(prob.q.probs(), &values);
    let foc_slack = verify_foc(&values, prob)?;
    Ok(CompositeSolution {
        test: ContinuousTest::tabulated(prob.level, prob.outcomes().to_vec(), values.clone())?,
        objective: prob.utility.expected(prob.q.probs(), &values),
        dual: vec![],
        active: vec![],
        ripr: None,
        lambda: power,
        foc_slack,
        restart_spread: 0.0,
        iterations: 0,
        notes: vec![
            "linear utility: optimal tests need not be unique; this is one optimal vertex of the power LP".into(),
        ],
    })
}

/// The LP `maximize c . eps` over level-`alpha` tests valid for every member.
fn valid_test_lp(prob: &CompositeProblem, c: Vec<f64>) -> BoxLp {
    BoxLp {
        upper: vec![prob.level.cap(); c.len()],
        a: prob.nulls.iter().map(|p| p.probs().to_vec()).collect(),
        b: vec![1.0; prob.nulls.len()],
        c,
    }
}

fn ln_values(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.ln()).collect()
}

/// `q_i U'(eps_i)` from `ln eps`, with the outcomes that carry an infinite
/// value at level 0 dropped. Working from logs keeps the weights finite when
/// a tiny test value underflows.
fn marginal_weights(ln_eps: &[f64], prob: &CompositeProblem) -> Vec<f64> {
    let free = prob.free();
    let inf_cap = prob.level.cap().is_infinite();
    prob.q
        .probs()
        .iter()
        .zip(ln_eps)
        .enumerate()
        .map(|(i, (qi, s))| {
            if *qi == 0.0 || (inf_cap && free[i]) {
                0.0
            } else {
                (qi.ln() + prob.utility.ln_derivative_exp(*s)).exp()
            }
        })
        .collect()
}

/// `sum_i c_i e^{s_i}` computed as `sum_i exp(ln c_i + s_i)`.
fn weighted_sum(c: &[f64], ln_eps: &[f64]) -> f64 {
    c.iter()
        .zip(ln_eps)
        .filter(|(ci, _)| **ci > 0.0)
        .map(|(ci, s)| (ci.ln() + s).exp())
        .sum()
}

/// `E_Q[U'(eps) eps]` over the outcomes with finite test value.
pub fn utility_lambda(values: &[f64], prob: &CompositeProblem) -> f64 {
    lambda_ln(&ln_values(values), prob)
}

fn lambda_ln(ln_eps: &[f64], prob: &CompositeProblem) -> f64 {
    weighted_sum(&marginal_weights(ln_eps, prob), ln_eps)
}

/// First-order-condition slack: the maximum of `E_Q[U'(eps*) eps]` over
/// valid level-`alpha` tests minus `E_Q[U'(eps*) eps*]`. Zero (up to
/// rounding) exactly at the optimum; positive when `eps*` can be improved.
pub fn verify_foc(values: &[f64], prob: &CompositeProblem) -> Result<f64> {
    foc_ln(&ln_values(values), prob)
}

fn foc_ln(ln_eps: &[f64], prob: &CompositeProblem) -> Result<f64> {
    let c = marginal_weights(ln_eps, prob);
    if c.iter().any(|v| !v.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let current = weighted_sum(&c, ln_eps);
    let best = maximize(&valid_test_lp(prob, c), Method::Auto)?.value();
    Ok(best - current)
}

/// The reverse information projection: masses `q U'(eps*) / E_Q[U'(eps*) eps*]`.
/// Requires `eps*` to be positive on Q's support.
pub fn ripr(values: &[f64], prob: &CompositeProblem) -> Result<FiniteMeasure> {
    ripr_ln(&ln_values(values), prob)
}

fn ripr_ln(ln_eps: &[f64], prob: &CompositeProblem) -> Result<FiniteMeasure> {
    if let Some(i) = (0..ln_eps.len()).find(|&i| prob.q.probs()[i] > 0.0 && ln_eps[i] == f64::NEG_INFINITY) {
        return Err(EtestError::Positivity(format!(
            "test is 0 at outcome {} which the alternative charges",
            prob.outcomes()[i]
        )));
    }
    let c = marginal_weights(ln_eps, prob);
    let lambda = weighted_sum(&c, ln_eps);
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(EtestError::Positivity(format!("E_Q[U'(eps) eps] = {lambda}")));
    }
    FiniteMeasure::new(prob.outcomes().to_vec(), c.iter().map(|v| v / lambda).collect())
}

/// Dual objective `E_Q[V(lambda p*/q)] + lambda` with `V` the Legendre
/// transform of the utility. Outcomes where `p*` vanishes contribute `sup U`.
pub fn dual_value(prob: &CompositeProblem, p_star: &FiniteMeasure, lambda: f64) -> Result<f64> {
    let mut total = lambda;
    for (qi, pi) in prob.q.probs().iter().zip(&p_star.masses) {
        if *qi == 0.0 {
            continue;
        }
        let y = lambda * pi / qi;
        total += if y > 0.0 {
            qi * legendre(&prob.utility, y)?
        } else {
            qi * prob.utility.value(f64::INFINITY)
        };
    }
    Ok(total)
}

/// `|E_Q[U(eps*)] - dual_value(ripr(eps*), lambda)|`.
pub fn duality_gap(values: &[f64], prob: &CompositeProblem) -> Result<f64> {
    let primal = prob.utility.expected(prob.q.probs(), values);
    let p_star = ripr(values, prob)?;
    let lambda = utility_lambda(values, prob);
    let dual = dual_value(prob, &p_star, lambda)?;
    if primal == dual {
        return Ok(0.0);
    }
    Ok((primal - dual).abs())
}

/// Membership in the level-`alpha` effective null.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    /// `sup E_candidate[eps]` over valid level-`alpha` tests.
    #[serde(with = "crate::ext_float")]
    pub value: f64,
    /// True when the supremum is at most `1 + 1e-9`.
    pub member: bool,
}

/// Decides whether every level-`alpha` test valid for `H` keeps expectation
/// at most 1 under `candidate`.
pub fn effective_membership(candidate: &FiniteDistribution, nulls: &[FiniteDistribution], level: Level) -> Result<Membership> {
    for p in nulls {
        p.check_same_space(candidate.outcomes())?;
    }
    let lp = BoxLp {
        c: candidate.probs().to_vec(),
        upper: vec![level.cap(); candidate.len()],
        a: nulls.iter().map(|p| p.probs().to_vec()).collect(),
        b: vec![1.0; nulls.len()],
    };
    let value = maximize(&lp, Method::Auto)?.value();
    Ok(Membership {
        value,
        member: value <= 1.0 + 1e-9,
    })
}

/// Rényi divergence of order `order` between `q` and the (possibly
/// unnormalized) `p`. Order 1 is the Kullback-Leibler divergence and order
/// `+inf` is `ln max q/p`; both are computed on Q's support.
pub fn renyi_divergence<M: MassFunction + ?Sized>(q: &FiniteDistribution, p: &M, order: f64) -> Result<f64> {
    if !(order > 0.0) {
        return Err(EtestError::InvalidArgument(format!("order {order} must be positive")));
    }
    q.check_same_space(p.outcomes())?;
    let pairs = q.probs().iter().zip(p.masses()).filter(|(qi, _)| **qi > 0.0);
    if order == 1.0 {
        return Ok(pairs
            .map(|(qi, pi)| if *pi == 0.0 { f64::INFINITY } else { qi * (qi / pi).ln() })
            .sum());
    }
    if order.is_infinite() {
        return Ok(testing_distance(q, p)?.ln());
    }
    let s: f64 = pairs
        .map(|(qi, pi)| {
            if *pi == 0.0 {
                if order > 1.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            } else {
                qi.powf(order) * pi.powf(1.0 - order)
            }
        })
        .sum();
    Ok(s.ln() / (order - 1.0))
}

/// `max dQ/dP*` over Q's support; `+inf` when `p_star` misses part of it.
pub fn testing_distance<M: MassFunction + ?Sized>(q: &FiniteDistribution, p_star: &M) -> Result<f64> {
    q.check_same_space(p_star.outcomes())?;
    Ok(q.probs()
        .iter()
        .zip(p_star.masses())
        .filter(|(qi, _)| **qi > 0.0)
        .map(|(qi, pi)| if *pi == 0.0 { f64::INFINITY } else { qi / pi })
        .fold(0.0, f64::max))
}

/// One step of the `h -> 1` schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitStep {
    /// Utility exponent.
    pub h: f64,
    /// `E_Q[eps_h]`.
    pub power: f64,
    /// Test values.
    pub values: Vec<f64>,
}

/// Result of [`np_limit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpLimit {
    /// Solutions along the schedule.
    pub steps: Vec<LimitStep>,
    /// Values of the last schedule entry, the limit estimate.
    pub limit_test: Vec<f64>,
    /// An optimal `h = 1` test from the power LP.
    pub lp_test: Vec<f64>,
    /// Optimal power at `h = 1`.
    pub lp_value: f64,
    /// `|E_Q[limit_test] - lp_value|`.
    pub deviation: f64,
}

/// Solves along a schedule of exponents approaching 1 and compares the
/// resulting power with the direct `h = 1` LP.
pub fn np_limit(nulls: &[FiniteDistribution], q: &FiniteDistribution, level: Level, schedule: &[f64], seed: u64) -> Result<NpLimit> {
    if level.alpha() == 0.0 {
        return Err(EtestError::InvalidLevel(0.0));
    }
    if schedule.is_empty() {
        return Err(EtestError::InvalidArgument("empty schedule".into()));
    }
    let mut steps = vec![];
    for &h in schedule {
        if !(h < 1.0) {
            return Err(EtestError::InvalidArgument(format!("schedule entry {h} must be below 1")));
        }
        let prob = CompositeProblem::new(nulls.to_vec(), q.clone(), level, Utility::power(h)?)?;
        let sol = solve_composite(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER, seed)?;
        steps.push(LimitStep {
            h,
            power: dot_ext(q.probs(), sol.values()),
            values: sol.values().to_vec(),
        });
    }
    let lin = CompositeProblem::new(nulls.to_vec(), q.clone(), level, Utility::power(1.0)?)?;
    let lp_sol = solve_linear(&lin)?;
    let lp_value = dot_ext(q.probs(), lp_sol.values());
    let last = steps.last().expect("nonempty schedule");
    Ok(NpLimit {
        limit_test: last.values.clone(),
        deviation: (last.power - lp_value).abs(),
        lp_test: lp_sol.values().to_vec(),
        lp_value,
        steps,
    })
}
