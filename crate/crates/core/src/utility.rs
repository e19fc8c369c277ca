//! Power targets: utilities U with derivative U' and inverse derivative,
//! the h-power family `(x^h - 1)/h` (log at h = 0), admissibility of a
//! utility at a level, generalized means and the Legendre transform
//! `V(y) = sup_x U(x) - x y`.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

use crate::error::{EtestError, Result};
use crate::measure::FiniteDistribution;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied utility callables and flags.
#[derive(Clone)]
pub struct CustomUtility {
    /// Display name.
    pub name: String,
    value: ScalarFn,
    derivative: ScalarFn,
    inverse_derivative: ScalarFn,
    strictly_concave: bool,
    sup_x_derivative: Option<f64>,
}

/// Family tag of a utility.
#[derive(Clone)]
pub enum UtilityKind {
    /// `(x^h - 1)/h` with `h <= 1`, `h != 0`.
    Power(f64),
    /// `ln x`.
    Log,
    /// User-supplied callables.
    Custom(CustomUtility),
}

/// A concave, nondecreasing utility on `[0, inf)`.
#[derive(Clone)]
pub struct Utility {
    kind: UtilityKind,
}

impl fmt::Debug for Utility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            UtilityKind::Power(h) => write!(f, "Utility::Power({h})"),
            UtilityKind::Log => write!(f, "Utility::Log"),
            UtilityKind::Custom(c) => write!(f, "Utility::Custom({})", c.name),
        }
    }
}

/// JSON form of a built-in utility: `{"utility": "power", "h": 0.5}` or
/// `{"utility": "log"}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "utility", rename_all = "lowercase")]
pub enum UtilitySpec {
    /// Power family with exponent `h`.
    Power {
        /// Exponent, at most 1.
        h: f64,
    },
    /// Logarithmic utility.
    Log,
}

impl UtilitySpec {
    /// Builds the utility.
    pub fn build(&self) -> Result<Utility> {
        match *self {
            UtilitySpec::Power { h } => Utility::power(h),
            UtilitySpec::Log => Ok(Utility::log()),
        }
    }
}

impl Utility {
    /// The power utility `(x^h - 1)/h`, or `ln x` at `h = 0`.
    pub fn power(h: f64) -> Result<Utility> {
        if !h.is_finite() || h > 1.0 {
            return Err(EtestError::InvalidArgument(format!(
                "power exponent h = {h} must be finite and at most 1"
            )));
        }
        let kind = if h == 0.0 {
            UtilityKind::Log
        } else {
            UtilityKind::Power(h)
        };
        Ok(Utility { kind })
    }

    /// The logarithmic utility.
    pub fn log() -> Utility {
        Utility {
            kind: UtilityKind::Log,
        }
    }

    /// A custom utility. The round trip `U'^-1(U'(x)) = x` is checked on a
    /// grid of points in `[0.01, 100]` when `strictly_concave` is set.
    /// `sup_x_derivative` is the bound on `x U'(x)` if one is known.
    pub fn custom(
        name: &str,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        inverse_derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        strictly_concave: bool,
        sup_x_derivative: Option<f64>,
    ) -> Result<Utility> {
        let c = CustomUtility {
            name: name.to_string(),
            value: Arc::new(value),
            derivative: Arc::new(derivative),
            inverse_derivative: Arc::new(inverse_derivative),
            strictly_concave,
            sup_x_derivative,
        };
        if strictly_concave {
            for k in 0..=40 {
                let x = 10f64.powf(-2.0 + 0.1 * k as f64);
                let back = (c.inverse_derivative)((c.derivative)(x));
                if (back - x).abs() > 1e-9 * x.max(1.0) {
                    return Err(EtestError::InvalidArgument(format!(
                        "custom utility {name}: inverse derivative round trip gives {back} at x = {x}"
                    )));
                }
            }
        }
        Ok(Utility {
            kind: UtilityKind::Custom(c),
        })
    }

    /// Family tag.
    pub fn kind(&self) -> &UtilityKind {
        &self.kind
    }

    /// Power exponent for the built-in family (0 for log), `None` for custom.
    pub fn h(&self) -> Option<f64> {
        match &self.kind {
            UtilityKind::Power(h) => Some(*h),
            UtilityKind::Log => Some(0.0),
            UtilityKind::Custom(_) => None,
        }
    }

    /// JSON form for built-in utilities.
    pub fn spec(&self) -> Option<UtilitySpec> {
        match &self.kind {
            UtilityKind::Power(h) => Some(UtilitySpec::Power { h: *h }),
            UtilityKind::Log => Some(UtilitySpec::Log),
            UtilityKind::Custom(_) => None,
        }
    }

    /// U(x).
    pub fn value(&self, x: f64) -> f64 {
        match &self.kind {
            UtilityKind::Log => x.ln(),
            UtilityKind::Power(h) => {
                if *h == 1.0 {
                    x - 1.0
                } else {
                    (x.powf(*h) - 1.0) / h
                }
            }
            UtilityKind::Custom(c) => (c.value)(x),
        }
    }

    /// U'(x).
    pub fn derivative(&self, x: f64) -> f64 {
        match &self.kind {
            UtilityKind::Log => 1.0 / x,
            UtilityKind::Power(h) => {
                if *h == 1.0 {
                    1.0
                } else {
                    x.powf(h - 1.0)
                }
            }
            UtilityKind::Custom(c) => (c.derivative)(x),
        }
    }

    /// `U(e^l)`, accurate when `e^l` underflows.
    pub(crate) fn value_exp(&self, l: f64) -> f64 {
        match &self.kind {
            UtilityKind::Log => l,
            UtilityKind::Power(h) if *h == 1.0 => l.exp() - 1.0,
            UtilityKind::Power(h) => ((h * l).exp() - 1.0) / h,
            UtilityKind::Custom(c) => (c.value)(l.exp()),
        }
    }

    /// `ln U'(e^s)`, exact for the power family when `e^s` underflows.
    pub(crate) fn ln_derivative_exp(&self, s: f64) -> f64 {
        match &self.kind {
            UtilityKind::Log => -s,
            UtilityKind::Power(h) if *h == 1.0 => 0.0,
            UtilityKind::Power(h) => (h - 1.0) * s,
            UtilityKind::Custom(c) => (c.derivative)(s.exp()).ln(),
        }
    }

    /// True when U' is strictly decreasing.
    pub fn is_strictly_concave(&self) -> bool {
        match &self.kind {
            UtilityKind::Log => true,
            UtilityKind::Power(h) => *h < 1.0,
            UtilityKind::Custom(c) => c.strictly_concave,
        }
    }

    /// U'^{-1}(y); fails when U' is not invertible.
    pub fn inverse_derivative(&self, y: f64) -> Result<f64> {
        match &self.kind {
            UtilityKind::Log => Ok(1.0 / y),
            UtilityKind::Power(h) => {
                if *h == 1.0 {
                    Err(EtestError::NonInvertible)
                } else {
                    Ok(y.powf(1.0 / (h - 1.0)))
                }
            }
            UtilityKind::Custom(c) => {
                if c.strictly_concave {
                    Ok((c.inverse_derivative)(y))
                } else {
                    Err(EtestError::NonInvertible)
                }
            }
        }
    }

    /// `ln U'^{-1}(e^t)`; evaluated in closed form for the power family so
    /// that extreme exponents do not overflow.
    pub(crate) fn ln_inverse_derivative_exp(&self, t: f64) -> f64 {
        match &self.kind {
            UtilityKind::Log => -t,
            UtilityKind::Power(h) => t / (h - 1.0),
            UtilityKind::Custom(c) => (c.inverse_derivative)(t.exp()).ln(),
        }
    }

    /// `d ln U'^{-1}(w) / d ln w` at `w = e^t`.
    pub(crate) fn inverse_derivative_elasticity(&self, t: f64) -> f64 {
        match &self.kind {
            UtilityKind::Log => -1.0,
            UtilityKind::Power(h) => 1.0 / (h - 1.0),
            UtilityKind::Custom(_) => {
                let d = 1e-5;
                (self.ln_inverse_derivative_exp(t + d) - self.ln_inverse_derivative_exp(t - d))
                    / (2.0 * d)
            }
        }
    }

    /// True when U is bounded above on `[0, cap]`.
    pub fn bounded_on(&self, cap: f64) -> bool {
        if cap.is_finite() {
            return true;
        }
        match &self.kind {
            UtilityKind::Power(h) => *h < 0.0,
            UtilityKind::Log => false,
            UtilityKind::Custom(c) => c.sup_x_derivative.is_some_and(f64::is_finite),
        }
    }

    /// Bound on `x U'(x)` over `x >= 1`, when known in closed form or supplied.
    pub fn sup_x_derivative(&self) -> Option<f64> {
        match &self.kind {
            UtilityKind::Log => Some(1.0),
            UtilityKind::Power(h) if *h < 0.0 => Some(1.0),
            UtilityKind::Power(_) => None,
            UtilityKind::Custom(c) => c.sup_x_derivative,
        }
    }

    /// `E_Q[U(v)]`, skipping outcomes without Q-mass.
    pub fn expected(&self, q: &[f64], values: &[f64]) -> f64 {
        q.iter()
            .zip(values)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, v)| w * self.value(*v))
            .sum()
    }
}

/// Verdict of [`admissibility`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admissibility {
    /// An optimal test is guaranteed to exist.
    Admissible,
    /// Existence is not guaranteed; solvers may still succeed.
    NotGuaranteed,
}

/// Admissibility verdict with a human-readable reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    /// Verdict.
    pub verdict: Admissibility,
    /// Why.
    pub reason: String,
}

/// Decides whether an optimal level-`alpha` test is guaranteed to exist:
/// always when `alpha > 0` (U is bounded on `[0, 1/alpha]`), and at
/// `alpha = 0` when `x U'(x)` is bounded.
pub fn admissibility(u: &Utility, alpha: f64) -> AdmissibilityReport {
    if alpha > 0.0 {
        return AdmissibilityReport {
            verdict: Admissibility::Admissible,
            reason: format!("alpha = {alpha} > 0, so U is bounded on [0, 1/alpha]"),
        };
    }
    let (bounded, why) = match u.kind() {
        UtilityKind::Log => (true, "xU'(x) = 1".to_string()),
        UtilityKind::Power(h) if *h < 0.0 => (true, format!("xU'(x) = x^{h} <= 1 on [1, inf)")),
        UtilityKind::Power(h) => (false, format!("xU'(x) = x^{h} is unbounded")),
        UtilityKind::Custom(c) => match c.sup_x_derivative {
            Some(s) if s.is_finite() => (true, format!("supplied bound sup xU'(x) = {s}")),
            _ => (false, "no finite bound on xU'(x) was supplied".to_string()),
        },
    };
    AdmissibilityReport {
        verdict: if bounded {
            Admissibility::Admissible
        } else {
            Admissibility::NotGuaranteed
        },
        reason: why,
    }
}

/// Generalized mean `(E_Q[v^h])^{1/h}`, or `exp E_Q[ln v]` at `h = 0`.
pub fn generalized_mean(q: &FiniteDistribution, values: &[f64], h: f64) -> Result<f64> {
    if values.len() != q.len() {
        return Err(EtestError::ModelMismatch(format!(
            "{} values for {} outcomes",
            values.len(),
            q.len()
        )));
    }
    if let Some(bad) = values.iter().find(|v| !(**v >= 0.0)) {
        return Err(EtestError::InvalidArgument(format!("negative value {bad}")));
    }
    if h > 1.0 {
        return Err(EtestError::InvalidArgument(format!("h = {h} exceeds 1")));
    }
    let support = q.probs().iter().zip(values).filter(|(w, _)| **w > 0.0);
    if h == 0.0 {
        let mut acc = 0.0;
        for (w, v) in support {
            if *v == 0.0 {
                return Ok(0.0);
            }
            acc += w * v.ln();
        }
        return Ok(acc.exp());
    }
    let s: f64 = support.map(|(w, v)| w * v.powf(h)).sum();
    Ok(s.powf(1.0 / h))
}

/// Legendre transform `V(y) = U(U'^{-1}(y)) - y U'^{-1}(y)`.
pub fn legendre(u: &Utility, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(EtestError::InvalidArgument(format!("y = {y} must be positive")));
    }
    if let UtilityKind::Log = u.kind() {
        return Ok(-y.ln() - 1.0);
    }
    let x = u.inverse_derivative(y)?;
    Ok(u.value(x) - y * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn power_examples() {
        let log = Utility::power(0.0).unwrap();
        assert_eq!(log.value(1.0), 0.0);
        assert_eq!(log.derivative(2.0), 0.5);

        let u = Utility::power(0.5).unwrap();
        assert!((u.value(4.0) - 2.0).abs() < 1e-15);
        assert!((u.inverse_derivative(0.5).unwrap() - 4.0).abs() < 1e-12);

        let lin = Utility::power(1.0).unwrap();
        assert_eq!(lin.value(3.0), 2.0);
        assert_eq!(lin.derivative(7.0), 1.0);
        assert!(!lin.is_strictly_concave());
        assert_eq!(lin.inverse_derivative(1.0), Err(EtestError::NonInvertible));

        assert!(Utility::power(1.5).is_err());
    }

    #[test]
    fn round_trip_on_a_grid() {
        for h in [-3.0, -1.0, -0.2, 0.0, 0.3, 0.9] {
            let u = Utility::power(h).unwrap();
            for k in 0..50 {
                let x = 0.05 * (k + 1) as f64;
                let back = u.inverse_derivative(u.derivative(x)).unwrap();
                assert!((back - x).abs() < 1e-9, "h={h} x={x} back={back}");
            }
        }
    }

    #[test]
    fn admissibility_examples() {
        let r = admissibility(&Utility::log(), 0.0);
        assert_eq!(r.verdict, Admissibility::Admissible);
        assert!(r.reason.contains("xU'(x) = 1"));
        let half = Utility::power(0.5).unwrap();
        assert_eq!(admissibility(&half, 0.0).verdict, Admissibility::NotGuaranteed);
        assert_eq!(admissibility(&half, 0.05).verdict, Admissibility::Admissible);
        let neg = Utility::power(-1.0).unwrap();
        assert_eq!(admissibility(&neg, 0.0).verdict, Admissibility::Admissible);
    }

    #[test]
    fn generalized_mean_examples() {
        let q = FiniteDistribution::from_probs(&[0.9, 0.1]).unwrap();
        assert!((generalized_mean(&q, &[2.0, 0.0], 1.0).unwrap() - 1.8).abs() < 1e-15);
        assert!((generalized_mean(&q, &[1.8, 0.2], -1.0).unwrap() - 1.0).abs() < 1e-14);
        let expected = (0.9 * 1.5f64.ln() + 0.1 * 0.25f64.ln()).exp();
        assert!((generalized_mean(&q, &[1.5, 0.25], 0.0).unwrap() - expected).abs() < 1e-15);
        assert!((expected.ln() - 0.226_3).abs() < 1e-4);
        assert_eq!(generalized_mean(&q, &[1.5, 0.0], 0.0).unwrap(), 0.0);
        assert_eq!(generalized_mean(&q, &[1.5, 0.0], -2.0).unwrap(), 0.0);
    }

    #[test]
    fn legendre_examples() {
        let log = Utility::log();
        assert!((legendre(&log, 1.0).unwrap() + 1.0).abs() < 1e-15);
        assert!(legendre(&log, (-1f64).exp()).unwrap().abs() < 1e-15);

        let u = Utility::power(0.5).unwrap();
        // Oracle: brute-force supremum of U(x) - x over a fine grid.
        let grid_sup = (0..=400_000)
            .map(|k| k as f64 * 1e-5)
            .map(|x| u.value(x) - x)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((legendre(&u, 1.0).unwrap() - grid_sup).abs() < 1e-6);
        assert!(legendre(&Utility::power(1.0).unwrap(), 1.0).is_err());
    }

    #[test]
    fn custom_utility_checks_round_trip() {
        let good = Utility::custom("log", f64::ln, |x| 1.0 / x, |y| 1.0 / y, true, Some(1.0));
        assert!(good.is_ok());
        let bad = Utility::custom("broken", f64::ln, |x| 1.0 / x, |y| 2.0 / y, true, None);
        assert!(bad.is_err());
        let good = good.unwrap();
        assert_eq!(admissibility(&good, 0.0).verdict, Admissibility::Admissible);
        assert!((good.inverse_derivative_elasticity(0.3) + 1.0).abs() < 1e-8);
    }

    #[test]
    fn spec_json() {
        let s: UtilitySpec = serde_json::from_str(r#"{"utility":"power","h":0.5}"#).unwrap();
        assert_eq!(s, UtilitySpec::Power { h: 0.5 });
        let s: UtilitySpec = serde_json::from_str(r#"{"utility":"log"}"#).unwrap();
        assert_eq!(s, UtilitySpec::Log);
        assert_eq!(Utility::power(0.0).unwrap().spec(), Some(UtilitySpec::Log));
    }

    fn arb_instance() -> impl Strategy<Value = (FiniteDistribution, Vec<f64>)> {
        (2usize..6).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.01f64..1.0, n),
                proptest::collection::vec(0.0f64..10.0, n),
            )
                .prop_map(|(w, v)| {
                    let s: f64 = w.iter().sum();
                    let p: Vec<f64> = w.iter().map(|x| x / s).collect();
                    (FiniteDistribution::from_probs(&p).unwrap(), v)
                })
        })
    }

    proptest! {
        #[test]
        fn generalized_mean_is_homogeneous((q, v) in arb_instance(), c in 0.01f64..100.0, h in -3.0f64..1.0) {
            let base = generalized_mean(&q, &v, h).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            let lhs = generalized_mean(&q, &scaled, h).unwrap();
            prop_assert!((lhs - c * base).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn generalized_mean_is_monotone_in_h((q, v) in arb_instance(), h1 in -3.0f64..1.0, h2 in -3.0f64..1.0) {
            let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
            let a = generalized_mean(&q, &v, lo).unwrap();
            let b = generalized_mean(&q, &v, hi).unwrap();
            prop_assert!(a <= b * (1.0 + 1e-12) + 1e-300);
        }

        #[test]
        fn legendre_is_a_supremum(h in -2.0f64..0.95, y in 0.05f64..20.0) {
            let u = Utility::power(h).unwrap();
            let v = legendre(&u, y).unwrap();
            let x_star = u.inverse_derivative(y).unwrap();
            prop_assert!((v - (u.value(x_star) - y * x_star)).abs() <= 1e-8 * (1.0 + v.abs()));
            for k in 1..200 {
                let x = x_star * (k as f64 / 50.0);
                prop_assert!(v >= u.value(x) - y * x - 1e-8 * (1.0 + v.abs()));
            }
        }
    }
}
