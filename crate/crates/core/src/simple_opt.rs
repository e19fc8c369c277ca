//! Expected-utility optimal continuous tests for a simple null `P` against a
//! simple alternative `Q` on a finite sample space.
//!
//! For a strictly concave utility the optimum is a member of the family
//! `eps_lambda = U'^{-1}(lambda p/q) ^ 1/alpha` on the common support, the
//! cap on outcomes only `Q` charges, and 0 elsewhere. The multiplier
//! `lambda*` is 0 when the all-cap test is already valid and otherwise the
//! root of `M(lambda) = E_P[eps_lambda] = 1`, which is continuous and
//! nonincreasing. The linear utility (`h = 1`) is handled by the
//! Neyman-Pearson construction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EtestError, Result};
use crate::evidence::{ContinuousTest, Level};
use crate::measure::{dot_ext, FiniteDistribution};
use crate::utility::{admissibility, Admissibility, Utility};

/// Default tolerance on `|M(lambda*) - 1|`.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Maximum number of doublings or halvings when bracketing `lambda*`.
pub const MAX_BRACKET_STEPS: usize = 200;

/// Boundary data of a Neyman-Pearson test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpBoundary {
    /// Likelihood-ratio value at which the test leaves the cap.
    #[serde(with = "crate::ext_float")]
    pub critical_value: f64,
    /// Value assigned at the boundary outcome.
    pub boundary_level: f64,
}

/// An optimal simple-null test with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleSolution {
    /// The test.
    pub test: ContinuousTest,
    /// The multiplier `lambda*` (0 for Neyman-Pearson solutions).
    pub lambda_star: f64,
    /// `E_Q[U(test)]`.
    #[serde(with = "crate::ext_float")]
    pub objective: f64,
    /// `E_Q[test]`.
    #[serde(with = "crate::ext_float")]
    pub power: f64,
    /// `E_P[test]`, i.e. `M(lambda*)`.
    pub null_expectation: f64,
    /// Bracketing plus bisection steps.
    pub iterations: usize,
    /// Present for Neyman-Pearson solutions.
    pub boundary: Option<NpBoundary>,
}

/// Result of the multiplier search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSolve {
    /// `lambda*`.
    pub lambda: f64,
    /// `M(lambda*)`.
    pub m_value: f64,
    /// Steps used.
    pub iterations: usize,
}

/// Precomputed per-outcome data for fast evaluation of `M(lambda)`.
pub(crate) struct Family<'a> {
    u: &'a Utility,
    p: &'a [f64],
    q: &'a [f64],
    ln_cap: f64,
    cap: f64,
    /// `(index, p_i, ln(p_i / q_i))` on the common support.
    common: Vec<(usize, f64, f64)>,
}

impl<'a> Family<'a> {
    pub(crate) fn new(u: &'a Utility, p: &'a [f64], q: &'a [f64], cap: f64) -> Self {
        let common = p
            .iter()
            .zip(q)
            .enumerate()
            .filter(|(_, (pi, qi))| **pi > 0.0 && **qi > 0.0)
            .map(|(i, (pi, qi))| (i, *pi, (pi / qi).ln()))
            .collect();
        Family {
            u,
            p,
            q,
            ln_cap: cap.ln(),
            cap,
            common,
        }
    }

    /// `eps_lambda` on a common-support outcome, with `ell = ln lambda`.
    fn value_at(&self, ell: f64, ln_ratio: f64) -> f64 {
        let ln_v = self.u.ln_inverse_derivative_exp(ell + ln_ratio);
        if ln_v >= self.ln_cap {
            self.cap
        } else {
            ln_v.exp()
        }
    }

    /// `M(e^ell)`.
    fn m(&self, ell: f64) -> f64 {
        self.common
            .iter()
            .map(|&(_, pi, r)| pi * self.value_at(ell, r))
            .sum()
    }

    /// Candidate values at `lambda = e^ell` on every outcome.
    pub(crate) fn values(&self, ell: f64) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .p
            .iter()
            .zip(self.q)
            .map(|(pi, qi)| if *pi == 0.0 && *qi > 0.0 { self.cap } else { 0.0 })
            .collect();
        for &(i, _, r) in &self.common {
            v[i] = self.value_at(ell, r);
        }
        v
    }

    /// Solves for `ln lambda*`; `-inf` encodes `lambda* = 0`.
    pub(crate) fn solve(&self, tol: f64) -> Result<(f64, f64, usize)> {
        let m0 = self.m(f64::NEG_INFINITY);
        if m0 <= 1.0 + 1e-12 {
            return Ok((f64::NEG_INFINITY, m0, 0));
        }
        let step = std::f64::consts::LN_2;
        let mut iterations = 0;
        let (mut lo, mut hi);
        let m1 = self.m(0.0);
        if m1 > 1.0 {
            lo = 0.0;
            hi = step;
            loop {
                iterations += 1;
                if self.m(hi) <= 1.0 {
                    break;
                }
                if iterations >= MAX_BRACKET_STEPS {
                    return Err(EtestError::ExistenceFailure(format!(
                        "E_P[eps_lambda] still exceeds 1 at lambda = 2^{MAX_BRACKET_STEPS}; \
                         an optimum is only guaranteed when alpha > 0 or x U'(x) is bounded"
                    )));
                }
                lo = hi;
                hi += step;
            }
        } else {
            hi = 0.0;
            lo = -step;
            loop {
                iterations += 1;
                if self.m(lo) > 1.0 {
                    break;
                }
                if iterations >= MAX_BRACKET_STEPS {
                    // M(0+) > 1 but M stays <= 1 down to 2^-200: the crossing
                    // is below double precision; use the smallest bracket end.
                    return Ok((hi, self.m(hi), iterations));
                }
                hi = lo;
                lo -= step;
            }
        }
        for _ in 0..MAX_BRACKET_STEPS {
            let m_hi = self.m(hi);
            if 1.0 - m_hi <= tol {
                return Ok((hi, m_hi, iterations));
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                return Ok((hi, m_hi, iterations));
            }
            iterations += 1;
            if self.m(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Err(EtestError::NonConvergence(format!(
            "bisection for lambda* did not reach |M - 1| <= {tol}"
        )))
    }
}

fn check_pair(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<()> {
    p.check_same_space(q.outcomes())
}

/// The candidate test `eps_lambda` at level `level`.
pub fn candidate(
    lambda: f64,
    p: &FiniteDistribution,
    q: &FiniteDistribution,
    u: &Utility,
    level: Level,
) -> Result<ContinuousTest> {
    check_pair(p, q)?;
    if !(lambda >= 0.0) {
        return Err(EtestError::InvalidArgument(format!("lambda = {lambda} is negative")));
    }
    u.inverse_derivative(1.0)?;
    let fam = Family::new(u, p.probs(), q.probs(), level.cap());
    ContinuousTest::tabulated(level, p.outcomes().to_vec(), fam.values(lambda.ln()))
}

/// Finds `lambda*`: 0 when `M(0) <= 1`, otherwise the bisection root of
/// `M(lambda) = 1` with `1 - tol <= M(lambda*) <= 1`.
pub fn solve_lambda(
    p: &FiniteDistribution,
    q: &FiniteDistribution,
    u: &Utility,
    level: Level,
    tol: f64,
) -> Result<LambdaSolve> {
    check_pair(p, q)?;
    u.inverse_derivative(1.0)?;
    let fam = Family::new(u, p.probs(), q.probs(), level.cap());
    let (ell, m_value, iterations) = fam.solve(tol)?;
    Ok(LambdaSolve {
        lambda: ell.exp(),
        m_value,
        iterations,
    })
}

/// The expected-utility optimal level-`alpha` test. The linear utility is
/// routed to [`neyman_pearson`].
pub fn optimal_simple(
    p: &FiniteDistribution,
    q: &FiniteDistribution,
    u: &Utility,
    level: Level,
) -> Result<SimpleSolution> {
    optimal_simple_tol(p, q, u, level, DEFAULT_TOL)
}

/// [`optimal_simple`] with an explicit tolerance on `|M(lambda*) - 1|`.
pub fn optimal_simple_tol(
    p: &FiniteDistribution,
    q: &FiniteDistribution,
    u: &Utility,
    level: Level,
    tol: f64,
) -> Result<SimpleSolution> {
    check_pair(p, q)?;
    if !u.is_strictly_concave() {
        if level.alpha() > 0.0 && u.h() == Some(1.0) {
            let mut sol = neyman_pearson(p, q, level.alpha())?;
            sol.objective = u.expected(q.probs(), sol.test.values().unwrap_or(&[]));
            return Ok(sol);
        }
        if level.alpha() == 0.0 {
            return Err(EtestError::ExistenceFailure(
                "a linear utility has no optimal level-0 test".into(),
            ));
        }
        return Err(EtestError::NonInvertible);
    }
    let fam = Family::new(u, p.probs(), q.probs(), level.cap());
    let (ell, m_value, iterations) = fam.solve(tol).map_err(|e| match e {
        EtestError::ExistenceFailure(msg)
            if admissibility(u, level.alpha()).verdict == Admissibility::NotGuaranteed =>
        {
            EtestError::ExistenceFailure(format!("{msg} (this utility is not admissible at alpha = 0)"))
        }
        other => other,
    })?;
    let values = fam.values(ell);
    let objective = u.expected(q.probs(), &values);
    let power = dot_ext(q.probs(), &values);
    Ok(SimpleSolution {
        test: ContinuousTest::tabulated(level, p.outcomes().to_vec(), values)?,
        lambda_star: ell.exp(),
        objective,
        power,
        null_expectation: m_value,
        iterations,
        boundary: None,
    })
}

/// Values of the optimal test on raw probability vectors; used on hot paths
/// where building labelled tests would dominate the cost.
pub(crate) fn optimal_values(p: &[f64], q: &[f64], u: &Utility, cap: f64) -> Result<Vec<f64>> {
    if !u.is_strictly_concave() {
        return np_values(p, q, cap).map(|(v, _)| v);
    }
    let fam = Family::new(u, p, q, cap);
    let (ell, _, _) = fam.solve(DEFAULT_TOL)?;
    Ok(fam.values(ell))
}

fn np_values(p: &[f64], q: &[f64], cap: f64) -> Result<(Vec<f64>, NpBoundary)> {
    if cap.is_infinite() {
        return Err(EtestError::InvalidLevel(0.0));
    }
    let n = p.len();
    let lr: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(pi, qi)| match crate::measure::ratio_entry(*pi, *qi) {
            crate::measure::RatioEntry::Value(v) => v,
            crate::measure::RatioEntry::Arbitrary => f64::NAN,
        })
        .collect();
    // Outcomes charged by neither distribution stay at 0.
    let mut order: Vec<usize> = (0..n).filter(|&i| !lr[i].is_nan()).collect();
    order.sort_by(|&a, &b| lr[b].partial_cmp(&lr[a]).expect("ratios are not NaN"));
    let mut values = vec![0.0; n];
    let mut budget = 1.0;
    let mut boundary = NpBoundary {
        critical_value: 0.0,
        boundary_level: cap,
    };
    let mut boundary_set = false;
    for &i in &order {
        let cost = p[i] * cap;
        if cost <= budget {
            values[i] = cap;
            budget -= cost;
        } else {
            let k = (budget / p[i]).clamp(0.0, cap);
            values[i] = k;
            budget = 0.0;
            if !boundary_set {
                boundary = NpBoundary {
                    critical_value: lr[i],
                    boundary_level: k,
                };
                boundary_set = true;
            }
        }
    }
    Ok((values, boundary))
}

/// The Neyman-Pearson test at level `alpha > 0`.
///
/// Outcomes are visited by likelihood ratio, largest first, ties in input
/// order. Each receives the cap while the budget `E_P[test] <= 1` allows it;
/// the first outcome that does not fit receives the remaining budget `K`
/// and defines the critical value. Later outcomes receive 0.
pub fn neyman_pearson(p: &FiniteDistribution, q: &FiniteDistribution, alpha: f64) -> Result<SimpleSolution> {
    check_pair(p, q)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(EtestError::InvalidLevel(alpha));
    }
    let level = Level::new(alpha)?;
    let (values, boundary) = np_values(p.probs(), q.probs(), level.cap())?;
    let power = dot_ext(q.probs(), &values);
    let null_expectation = dot_ext(p.probs(), &values);
    Ok(SimpleSolution {
        test: ContinuousTest::tabulated(level, p.outcomes().to_vec(), values)?,
        lambda_star: 0.0,
        objective: power - 1.0,
        power,
        null_expectation,
        iterations: 0,
        boundary: Some(boundary),
    })
}

/// Best test found by the grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// `E_Q[U(test)]` of the best test.
    #[serde(with = "crate::ext_float")]
    pub value: f64,
    /// The best test's values.
    #[serde(with = "crate::ext_float::vec")]
    pub values: Vec<f64>,
}

fn better(a: &(f64, Vec<f64>), b: &(f64, Vec<f64>)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0 || b.0.is_nan();
    }
    a.1.iter().zip(&b.1).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

/// Exhaustive grid search for the best valid test, used as an independent
/// oracle. On the common support every coordinate but the last runs over
/// `grid_n` points of `[0, min(cap, 1/p_i)]`; the last one takes whatever
/// budget remains, since the utility is nondecreasing. One refinement pass
/// repeats the search on a grid of the same size around the incumbent.
pub fn brute_force_oracle(
    p: &FiniteDistribution,
    q: &FiniteDistribution,
    u: &Utility,
    level: Level,
    grid_n: usize,
) -> Result<OracleResult> {
    check_pair(p, q)?;
    if p.len() > 6 {
        return Err(EtestError::TooLarge(format!(
            "grid oracle supports at most 6 outcomes, got {}",
            p.len()
        )));
    }
    if !(2..=101).contains(&grid_n) {
        return Err(EtestError::InvalidArgument(format!(
            "grid size {grid_n} must be in [2, 101]"
        )));
    }
    let (pp, qq) = (p.probs(), q.probs());
    let cap = level.cap();
    let mut base = vec![0.0; p.len()];
    let mut free = vec![];
    for i in 0..p.len() {
        match (pp[i] > 0.0, qq[i] > 0.0) {
            (true, true) => free.push(i),
            (false, true) => base[i] = cap,
            _ => {}
        }
    }
    let score = |v: &[f64]| u.expected(qq, v);
    if free.is_empty() {
        return Ok(OracleResult {
            value: score(&base),
            values: base,
        });
    }
    let bound: Vec<f64> = free.iter().map(|&i| cap.min(1.0 / pp[i])).collect();
    let last = *free.last().expect("nonempty");
    let lead = &free[..free.len() - 1];

    let search = |lo: &[f64], hi: &[f64]| -> (f64, Vec<f64>) {
        let axis = |j: usize, k: usize| lo[j] + (hi[j] - lo[j]) * k as f64 / (grid_n - 1) as f64;
        let first_range = if lead.is_empty() { 1 } else { grid_n };
        (0..first_range)
            .into_par_iter()
            .map(|k0| {
                let mut best: (f64, Vec<f64>) = (f64::NEG_INFINITY, base.clone());
                let mut idx = vec![0usize; lead.len()];
                if !lead.is_empty() {
                    idx[0] = k0;
                }
                loop {
                    let mut v = base.clone();
                    let mut used = 0.0;
                    for (j, &i) in lead.iter().enumerate() {
                        v[i] = axis(j, idx[j]);
                        used += pp[i] * v[i];
                    }
                    if used <= 1.0 {
                        let room = ((1.0 - used) / pp[last]).max(0.0);
                        v[last] = bound[lead.len()].min(room);
                        let cand = (score(&v), v);
                        if better(&cand, &best) {
                            best = cand;
                        }
                    }
                    // Advance the odometer over every lead axis except the first.
                    let mut j = lead.len();
                    loop {
                        if j <= 1 {
                            return best;
                        }
                        j -= 1;
                        idx[j] += 1;
                        if idx[j] < grid_n {
                            break;
                        }
                        idx[j] = 0;
                    }
                }
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((f64::NEG_INFINITY, base.clone()), |acc, c| {
                if better(&c, &acc) {
                    c
                } else {
                    acc
                }
            })
    };

    let zeros = vec![0.0; lead.len() + 1];
    let coarse = search(&zeros, &bound);
    let step: Vec<f64> = bound.iter().map(|b| b / (grid_n - 1) as f64).collect();
    let lo: Vec<f64> = free
        .iter()
        .enumerate()
        .map(|(j, &i)| (coarse.1[i] - step[j]).max(0.0))
        .collect();
    let hi: Vec<f64> = free
        .iter()
        .enumerate()
        .map(|(j, &i)| (coarse.1[i] + step[j]).min(bound[j]))
        .collect();
    let fine = search(&lo, &hi);
    let best = if better(&fine, &coarse) { fine } else { coarse };
    Ok(OracleResult {
        value: best.0,
        values: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::check_validity_exact;
    use proptest::prelude::*;

    fn d(p: &[f64]) -> FiniteDistribution {
        FiniteDistribution::from_probs(p).unwrap()
    }

    fn lv(a: f64) -> Level {
        Level::new(a).unwrap()
    }

    #[test]
    fn candidate_examples() {
        let (p, q) = (d(&[0.5, 0.5]), d(&[0.9, 0.1]));
        let t = candidate(1.0, &p, &q, &Utility::log(), lv(0.0)).unwrap();
        let v = t.values().unwrap();
        assert!((v[0] - 1.8).abs() < 1e-14 && (v[1] - 0.2).abs() < 1e-14);

        let t = candidate(0.6, &p, &q, &Utility::log(), lv(0.6)).unwrap();
        let v = t.values().unwrap();
        assert!((v[0] - 1.0 / 0.6).abs() < 1e-14, "{v:?}");
        assert!((v[1] - 0.1 / 0.3).abs() < 1e-14);

        let t = candidate(1.0, &d(&[1.0, 0.0]), &d(&[0.5, 0.5]), &Utility::log(), lv(0.05)).unwrap();
        let v = t.values().unwrap();
        assert!((v[0] - 0.5).abs() < 1e-15);
        assert_eq!(v[1], 20.0);

        let t = candidate(0.0, &p, &q, &Utility::log(), lv(0.25)).unwrap();
        assert_eq!(t.values().unwrap(), &[4.0, 4.0]);
        assert!(candidate(1.0, &p, &q, &Utility::power(1.0).unwrap(), lv(0.25)).is_err());
    }

    #[test]
    fn lambda_examples() {
        let (p, q) = (d(&[0.5, 0.5]), d(&[0.9, 0.1]));
        let s = solve_lambda(&p, &q, &Utility::log(), lv(0.0), DEFAULT_TOL).unwrap();
        assert!((s.lambda - 1.0).abs() < 1e-11);
        let s = solve_lambda(&p, &q, &Utility::log(), lv(0.6), DEFAULT_TOL).unwrap();
        assert!((s.lambda - 0.6).abs() < 1e-11, "{}", s.lambda);
        let s = solve_lambda(&d(&[0.5, 0.5]), &d(&[0.5, 0.5]), &Utility::power(-1.0).unwrap(), lv(1.0), DEFAULT_TOL)
            .unwrap();
        assert_eq!(s.lambda, 0.0);
        assert_eq!(s.m_value, 1.0);
    }

    #[test]
    fn optimal_examples() {
        let (p, q) = (d(&[0.5, 0.5]), d(&[0.9, 0.1]));
        let s = optimal_simple(&p, &q, &Utility::log(), lv(0.0)).unwrap();
        let v = s.test.values().unwrap();
        assert!((v[0] - 1.8).abs() < 1e-11 && (v[1] - 0.2).abs() < 1e-11);
        let hand = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
        assert!((s.objective - hand).abs() < 1e-11);
        assert!((s.objective - 0.3681).abs() < 1e-4);

        let s = optimal_simple(&p, &q, &Utility::log(), lv(0.6)).unwrap();
        let v = s.test.values().unwrap();
        assert!((v[0] - 5.0 / 3.0).abs() < 1e-11 && (v[1] - 1.0 / 3.0).abs() < 1e-11);
        let oracle = brute_force_oracle(&p, &q, &Utility::log(), lv(0.6), 101).unwrap();
        assert!(s.objective >= oracle.value - 1e-6);
        assert!(s.objective - oracle.value < 1e-3);

        // h = -1: proportional to LR^{1/2}, normalized to unit null mean.
        let s = optimal_simple(&p, &q, &Utility::power(-1.0).unwrap(), lv(0.0)).unwrap();
        let root: Vec<f64> = [1.8f64, 0.2].iter().map(|x| x.sqrt()).collect();
        let norm = 0.5 * root[0] + 0.5 * root[1];
        let v = s.test.values().unwrap();
        for i in 0..2 {
            assert!((v[i] - root[i] / norm).abs() < 1e-11);
        }
        let oracle = brute_force_oracle(&p, &q, &Utility::power(-1.0).unwrap(), lv(0.0), 101).unwrap();
        assert!(s.objective >= oracle.value - 1e-9);
    }

    #[test]
    fn linear_utility_routes_to_neyman_pearson() {
        let (p, q) = (d(&[0.5, 0.5]), d(&[0.9, 0.1]));
        let s = optimal_simple(&p, &q, &Utility::power(1.0).unwrap(), lv(0.25)).unwrap();
        assert!(s.boundary.is_some());
        assert_eq!(s.test.values().unwrap(), &[2.0, 0.0]);
        assert!(optimal_simple(&p, &q, &Utility::power(1.0).unwrap(), lv(0.0)).is_err());
    }

    #[test]
    fn neyman_pearson_examples() {
        let (p, q) = (d(&[0.5, 0.5]), d(&[0.9, 0.1]));
        let s = neyman_pearson(&p, &q, 0.25).unwrap();
        assert_eq!(s.test.values().unwrap(), &[2.0, 0.0]);
        assert_eq!(s.power, 1.8);
        let b = s.boundary.unwrap();
        assert_eq!(b.boundary_level, 2.0);
        assert!((b.critical_value - 1.8).abs() < 1e-15);

        let s = neyman_pearson(&d(&[0.5, 0.5]), &d(&[0.5, 0.5]), 0.5).unwrap();
        assert_eq!(s.test.values().unwrap(), &[2.0, 0.0]);
        assert_eq!(s.null_expectation, 1.0);

        let s = neyman_pearson(&d(&[0.3, 0.7]), &d(&[0.6, 0.4]), 1.0).unwrap();
        assert_eq!(s.test.values().unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn oracle_constant_model() {
        let p = d(&[0.2, 0.3, 0.5]);
        let r = brute_force_oracle(&p, &p, &Utility::log(), lv(0.5), 41).unwrap();
        // Unit null mean is the best any test can do when P = Q.
        assert!(r.value.abs() < 1e-3, "{}", r.value);
        assert!(brute_force_oracle(&d(&[0.1; 10]), &d(&[0.1; 10]), &Utility::log(), lv(0.5), 11).is_err());
    }

    #[test]
    fn oracle_matches_neyman_pearson_at_h1() {
        let (p, q) = (d(&[0.2, 0.5, 0.3]), d(&[0.5, 0.1, 0.4]));
        let lin = Utility::power(1.0).unwrap();
        let np = neyman_pearson(&p, &q, 0.25).unwrap();
        let r = brute_force_oracle(&p, &q, &lin, lv(0.25), 101).unwrap();
        assert!((np.objective - r.value).abs() < 1e-2);
        assert!(np.objective >= r.value - 1e-12);
    }

    #[test]
    fn rounding_an_e_value_loses_the_inflation() {
        let (p, q) = (d(&[0.5, 0.3, 0.2]), d(&[0.1, 0.3, 0.6]));
        let alpha = 0.4;
        let level0 = optimal_simple(&p, &q, &Utility::log(), lv(0.0)).unwrap();
        let capped = optimal_simple(&p, &q, &Utility::log(), lv(alpha)).unwrap();
        assert!(capped.lambda_star < level0.lambda_star);
        let rounded: Vec<f64> = level0.test.values().unwrap().iter().map(|e| e.min(1.0 / alpha)).collect();
        let rounded_obj = Utility::log().expected(q.probs(), &rounded);
        assert!(capped.objective > rounded_obj);
    }

    fn arb_model() -> impl Strategy<Value = (FiniteDistribution, FiniteDistribution)> {
        (2usize..5).prop_flat_map(|n| {
            let cell = prop_oneof![1 => Just(0.0), 6 => 0.02f64..1.0];
            (proptest::collection::vec(cell.clone(), n), proptest::collection::vec(cell, n))
                .prop_filter_map("positive mass", |(a, b)| {
                    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
                    if sa == 0.0 || sb == 0.0 {
                        return None;
                    }
                    Some((
                        d(&a.iter().map(|x| x / sa).collect::<Vec<_>>()),
                        d(&b.iter().map(|x| x / sb).collect::<Vec<_>>()),
                    ))
                })
        })
    }

    proptest! {
        #[test]
        fn solutions_are_valid_tight_and_monotone(
            (p, q) in arb_model(),
            h in prop_oneof![Just(-2.0), Just(-1.0), Just(0.0), Just(0.5), Just(0.9)],
            alpha in prop_oneof![Just(0.0), 0.01f64..1.0],
        ) {
            prop_assume!(!(alpha == 0.0 && h > 0.0));
            let u = Utility::power(h).unwrap();
            let s = optimal_simple(&p, &q, &u, lv(alpha)).unwrap();
            let r = check_validity_exact(&s.test, std::slice::from_ref(&p)).unwrap();
            prop_assert!(r.valid);
            if s.lambda_star > 0.0 {
                prop_assert!((r.max_expectation - 1.0).abs() <= 1e-9);
            }
            let lr = crate::measure::likelihood_ratio(&p, &q).unwrap().resolved();
            let v = s.test.values().unwrap();
            let part = crate::measure::support_partition(&p, &q).unwrap();
            for &i in &part.common {
                for &j in &part.common {
                    if lr[i] < lr[j] {
                        prop_assert!(v[i] <= v[j] * (1.0 + 1e-12));
                    }
                }
            }
        }

        #[test]
        fn neyman_pearson_is_valid(
            (p, q) in arb_model(),
            alpha in 0.01f64..1.0,
        ) {
            let s = neyman_pearson(&p, &q, alpha).unwrap();
            let r = check_validity_exact(&s.test, std::slice::from_ref(&p)).unwrap();
            prop_assert!(r.valid);
        }
    }
}
