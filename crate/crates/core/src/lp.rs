//! Small linear programs over a box with nonnegative packing constraints:
//! maximize `c . x` subject to `0 <= x <= u` and `A x <= b`, with `A >= 0`
//! and `b >= 0`. Upper bounds may be infinite.
//!
//! Instances with at most six variables are solved by exhaustive vertex
//! enumeration; larger ones by a dense tableau simplex with Bland's rule.

use serde::{Deserialize, Serialize};

use crate::error::{EtestError, Result};

/// Feasibility tolerance for enumerated vertices.
pub const FEAS_TOL: f64 = 1e-9;

/// Largest instance handled by vertex enumeration.
pub const MAX_ENUM_VARS: usize = 6;

/// A packing LP over a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxLp {
    /// Objective coefficients.
    pub c: Vec<f64>,
    /// Upper bounds, possibly `+inf`.
    #[serde(with = "crate::ext_float::vec")]
    pub upper: Vec<f64>,
    /// Constraint rows, each of length `c.len()`.
    pub a: Vec<Vec<f64>>,
    /// Right-hand sides.
    pub b: Vec<f64>,
}

/// Solution of a [`BoxLp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LpOutcome {
    /// Finite optimum.
    Optimal {
        /// Optimal value.
        value: f64,
        /// An optimal point.
        x: Vec<f64>,
    },
    /// The objective is unbounded above.
    Unbounded,
}

impl LpOutcome {
    /// Optimal value, `+inf` when unbounded.
    pub fn value(&self) -> f64 {
        match self {
            LpOutcome::Optimal { value, .. } => *value,
            LpOutcome::Unbounded => f64::INFINITY,
        }
    }
}

/// Solution method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Vertex enumeration for small instances, simplex otherwise.
    Auto,
    /// Exhaustive vertex enumeration.
    Enumerate,
    /// Dense simplex.
    Simplex,
}

impl BoxLp {
    fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if self.upper.len() != n || self.a.iter().any(|r| r.len() != n) || self.a.len() != self.b.len() {
            return Err(EtestError::ModelMismatch("LP dimensions disagree".into()));
        }
        let bad = |v: f64| !(v >= 0.0);
        if self.upper.iter().any(|&u| bad(u))
            || self.b.iter().any(|&v| bad(v) || v.is_infinite())
            || self.a.iter().flatten().any(|&v| bad(v) || v.is_infinite())
            || self.c.iter().any(|v| !v.is_finite())
        {
            return Err(EtestError::InvalidArgument(
                "LP needs finite c, A >= 0, b >= 0 and u >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Replaces infinite bounds by the ones implied by the rows. Returns
    /// `None` when the objective is unbounded.
    fn finite_bounds(&self) -> Option<Vec<f64>> {
        let mut u = self.upper.clone();
        for i in 0..u.len() {
            if u[i].is_finite() {
                continue;
            }
            let implied = self
                .a
                .iter()
                .zip(&self.b)
                .filter(|(row, _)| row[i] > 0.0)
                .map(|(row, bj)| bj / row[i])
                .fold(f64::INFINITY, f64::min);
            if implied.is_finite() {
                u[i] = implied;
            } else if self.c[i] > 0.0 {
                return None;
            } else {
                u[i] = 0.0;
            }
        }
        Some(u)
    }
}

/// Solves the LP.
pub fn maximize(lp: &BoxLp, method: Method) -> Result<LpOutcome> {
    lp.validate()?;
    let Some(u) = lp.finite_bounds() else {
        return Ok(LpOutcome::Unbounded);
    };
    let use_enum = match method {
        Method::Auto => lp.c.len() <= MAX_ENUM_VARS && lp.a.len() <= 10,
        Method::Enumerate => true,
        Method::Simplex => false,
    };
    let x = if use_enum {
        enumerate(&lp.c, &u, &lp.a, &lp.b)?
    } else {
        simplex(&lp.c, &u, &lp.a, &lp.b)?
    };
    let value = lp.c.iter().zip(&x).map(|(c, x)| c * x).sum();
    Ok(LpOutcome::Optimal { value, x })
}

/// Gaussian elimination with partial pivoting; `None` when singular.
pub(crate) fn solve_square(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let k = rhs.len();
    for col in 0..k {
        let piv = (col..k).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in col + 1..k {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..k {
                    m[r][c] -= f * m[col][c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|c| m[r][c] * x[c]).sum();
        x[r] = (rhs[r] - s) / m[r][r];
    }
    Some(x)
}

fn enumerate(c: &[f64], u: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = c.len();
    let m = a.len();
    if n > 12 {
        return Err(EtestError::TooLarge(format!("{n} variables for vertex enumeration")));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let total = 3usize.pow(n as u32);
    for rows in 0u32..(1 << m) {
        let r: Vec<usize> = (0..m).filter(|j| rows >> j & 1 == 1).collect();
        for code in 0..total {
            // Digit 0: at lower bound, 1: at upper bound, 2: free.
            let mut state = vec![0u8; n];
            let mut rest = code;
            for s in state.iter_mut() {
                *s = (rest % 3) as u8;
                rest /= 3;
            }
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
            if free.len() != r.len() {
                continue;
            }
            let mut x: Vec<f64> = (0..n).map(|i| if state[i] == 1 { u[i] } else { 0.0 }).collect();
            if !free.is_empty() {
                let mat: Vec<Vec<f64>> = r.iter().map(|&j| free.iter().map(|&i| a[j][i]).collect()).collect();
                let rhs: Vec<f64> = r
                    .iter()
                    .map(|&j| b[j] - (0..n).filter(|i| state[*i] != 2).map(|i| a[j][i] * x[i]).sum::<f64>())
                    .collect();
                let Some(sol) = solve_square(mat, rhs) else { continue };
                for (&i, v) in free.iter().zip(sol) {
                    x[i] = v;
                }
            }
            let scale = |v: f64| FEAS_TOL * v.abs().max(1.0);
            if x.iter().zip(u).any(|(&xi, &ui)| xi < -scale(ui) || xi > ui + scale(ui)) {
                continue;
            }
            if a.iter().zip(b).any(|(row, &bj)| row.iter().zip(&x).map(|(p, v)| p * v).sum::<f64>() > bj + scale(bj)) {
                continue;
            }
            for (xi, &ui) in x.iter_mut().zip(u) {
                *xi = xi.clamp(0.0, ui);
            }
            let val: f64 = c.iter().zip(&x).map(|(c, x)| c * x).sum();
            let replace = match &best {
                None => true,
                Some((bv, bx)) => {
                    val > bv + 1e-12 * bv.abs().max(1.0)
                        || ((val - bv).abs() <= 1e-12 * bv.abs().max(1.0)
                            && x.iter().zip(bx).find(|(p, q)| p != q).is_some_and(|(p, q)| p < q))
                }
            };
            if replace {
                best = Some((val, x));
            }
        }
    }
    best.map(|(_, x)| x)
        .ok_or_else(|| EtestError::NonConvergence("no feasible vertex found".into()))
}

fn simplex(c: &[f64], u: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = c.len();
    // Rows: packing constraints then the finite box bounds, all <= with
    // nonnegative right-hand side, so the slack basis is feasible.
    let mut rows: Vec<(Vec<f64>, f64)> = a.iter().cloned().zip(b.iter().copied()).collect();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        rows.push((e, u[i]));
    }
    let m = rows.len();
    let width = n + m + 1;
    let mut t: Vec<Vec<f64>> = rows
        .iter()
        .enumerate()
        .map(|(r, (coef, rhs))| {
            let mut line = vec![0.0; width];
            line[..n].copy_from_slice(coef);
            line[n + r] = 1.0;
            line[width - 1] = *rhs;
            line
        })
        .collect();
    let mut obj = vec![0.0; width];
    for i in 0..n {
        obj[i] = -c[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    const EPS: f64 = 1e-12;
    for _ in 0..10_000 {
        let Some(enter) = (0..width - 1).find(|&j| obj[j] < -EPS) else {
            let mut x = vec![0.0; n];
            for (r, &bv) in basis.iter().enumerate() {
                if bv < n {
                    x[bv] = t[r][width - 1].clamp(0.0, u[bv]);
                }
            }
            return Ok(x);
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            if t[r][enter] > EPS {
                let ratio = t[r][width - 1] / t[r][enter];
                leave = match leave {
                    Some((lr, lv)) if ratio > lv + EPS || (ratio >= lv - EPS && basis[r] > basis[lr]) => Some((lr, lv)),
                    _ => Some((r, ratio)),
                };
            }
        }
        let Some((lr, _)) = leave else {
            return Err(EtestError::NonConvergence("simplex found an unbounded ray in a bounded LP".into()));
        };
        let piv = t[lr][enter];
        for v in t[lr].iter_mut() {
            *v /= piv;
        }
        let pivot_row = t[lr].clone();
        for (r, line) in t.iter_mut().enumerate() {
            if r != lr && line[enter] != 0.0 {
                let f = line[enter];
                for (v, p) in line.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
            }
        }
        let f = obj[enter];
        for (v, p) in obj.iter_mut().zip(&pivot_row) {
            *v -= f * p;
        }
        basis[lr] = enter;
    }
    Err(EtestError::NonConvergence("simplex iteration limit".into()))
}
