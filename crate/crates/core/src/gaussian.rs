//! Optimal continuous tests for the Gaussian location model: null
//! `N(0, sigma^2)` against `N(mu, sigma^2)`.
//!
//! With `k = 1/(1-h)` the level-0 optimum for `h < 1` is the likelihood ratio
//! of `N(k mu, sigma^2)` against the null,
//! `exp((2 k x mu - k^2 mu^2) / (2 sigma^2))`. At level `alpha > 0` the
//! optimum is `b * that ^ 1/alpha` with an inflation `b >= 1` restoring unit
//! null mean, and `h = 1` gives the one-sided Z test.
//!
//! The null mean of the capped form has a closed form in terms of the normal
//! distribution function, evaluated in log space so that inflations like
//! `e^5000` stay representable. Adaptive quadrature is offered as an
//! independent cross-check.

use serde::{Deserialize, Serialize};

use crate::error::{EtestError, Result};
use crate::evidence::{ContinuousTest, Level};
use crate::mc::{mean_estimate, McEstimate};
use crate::measure::GaussianLocation;
use crate::normal;
use crate::quadrature;

/// Default relative tolerance on `ln b`.
pub const DEFAULT_TOL: f64 = 1e-13;

/// A Gaussian-form continuous test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianTest {
    /// Alternative mean and common standard deviation.
    pub model: GaussianLocation,
    /// Power exponent; `h = 1` is the threshold form.
    pub h: f64,
    /// Natural log of the inflation factor `b` (0 for the level-0 form).
    /// Stored in log space because `b` overflows for `h` close to 1.
    #[serde(with = "crate::ext_float")]
    pub ln_inflation: f64,
    /// Level; the cap is `1/alpha`.
    pub level: Level,
}

fn kappa(h: f64) -> f64 {
    1.0 / (1.0 - h)
}

/// Value of the Gaussian form at `x`; shared with [`ContinuousTest`].
pub(crate) fn evaluate_form(model: &GaussianLocation, h: f64, ln_b: f64, level: Level, x: f64) -> f64 {
    let (mu, sigma) = (model.mu, model.sigma);
    if h == 1.0 {
        let threshold = sigma * normal::quantile(1.0 - level.alpha());
        return if mu.signum() * x > threshold { level.cap() } else { 0.0 };
    }
    if ln_b == f64::NEG_INFINITY {
        return 0.0;
    }
    let k = kappa(h);
    let exponent = (2.0 * k * x * mu - k * k * mu * mu) / (2.0 * sigma * sigma);
    let ln_v = ln_b + exponent;
    let ln_cap = level.cap().ln();
    if ln_v >= ln_cap {
        level.cap()
    } else {
        ln_v.exp()
    }
}

impl GaussianTest {
    /// The inflation factor `b`.
    pub fn inflation(&self) -> f64 {
        self.ln_inflation.exp()
    }

    /// Value at `x`.
    pub fn evaluate(&self, x: f64) -> f64 {
        evaluate_form(&self.model, self.h, self.ln_inflation, self.level, x)
    }

    /// The point where the test reaches its cap: the rejection threshold for
    /// `h = 1`, and `+-inf` when the cap is never reached.
    pub fn threshold(&self) -> f64 {
        let (mu, sigma) = (self.model.mu, self.model.sigma);
        if self.h == 1.0 {
            return mu.signum() * sigma * normal::quantile(1.0 - self.level.alpha());
        }
        if mu == 0.0 || self.level.cap().is_infinite() {
            return f64::INFINITY;
        }
        let k = kappa(self.h);
        let a = k * mu / (sigma * sigma);
        let c = k * k * mu * mu / (2.0 * sigma * sigma);
        (self.level.cap().ln() - self.ln_inflation + c) / a
    }

    /// The general [`ContinuousTest`] view of this test.
    pub fn to_continuous_test(&self) -> Result<ContinuousTest> {
        ContinuousTest::gaussian(self.level, self.model, self.h, self.ln_inflation)
    }

    /// Exact `E_{N(0, sigma^2)}[test]`.
    pub fn null_expectation(&self) -> f64 {
        if self.h == 1.0 {
            return self.level.cap() * normal::sf(normal::quantile(1.0 - self.level.alpha()));
        }
        capped_null_expectation(self.model, self.h, self.ln_inflation, self.level.cap())
    }
}

/// Closed-form `E_{N(0,sigma^2)}[min(e^{ln_b} eps_{0,h}(X), cap)]`.
pub fn capped_null_expectation(model: GaussianLocation, h: f64, ln_b: f64, cap: f64) -> f64 {
    if ln_b == f64::NEG_INFINITY {
        return 0.0;
    }
    let mu = model.mu.abs();
    let sigma = model.sigma;
    if mu == 0.0 {
        return ln_b.exp().min(cap);
    }
    let k = kappa(h);
    let a = k * mu / (sigma * sigma);
    let c = k * k * mu * mu / (2.0 * sigma * sigma);
    if cap.is_infinite() {
        return ln_b.exp();
    }
    if ln_b == f64::INFINITY {
        return cap;
    }
    // The test reaches its cap for x >= t (mirrored when mu < 0).
    let t = (cap.ln() - ln_b + c) / a;
    let below = (ln_b + normal::ln_cdf(t / sigma - k * mu / sigma)).exp();
    let above = cap * normal::sf(t / sigma);
    below + above
}

/// Null mean of a Gaussian-form test by adaptive Gauss-Kronrod quadrature
/// over `[-12 sigma, 12 sigma]`, split at the cap point.
pub fn quadrature_null_expectation(test: &GaussianTest, tol: f64) -> f64 {
    let sigma = test.model.sigma;
    let null = GaussianLocation { mu: 0.0, sigma };
    let (lo, hi) = (-12.0 * sigma, 12.0 * sigma);
    let integrand = |x: f64| {
        let v = test.evaluate(x);
        if v == 0.0 {
            0.0
        } else {
            (v.ln() + null.density(x).ln()).exp()
        }
    };
    let mut cuts = vec![lo];
    let t = test.threshold();
    if t > lo && t < hi {
        cuts.push(t);
    }
    cuts.push(hi);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += quadrature::integrate(integrand, w[0], w[1], tol, tol).value;
    }
    // Mass beyond the window, where the test sits at 0 or at its cap.
    let right = test.evaluate(hi) * normal::sf(12.0);
    let left = test.evaluate(lo) * normal::sf(12.0);
    total + right + left
}

/// The level-0 optimum `exp((2 k x mu - k^2 mu^2)/(2 sigma^2))`.
pub fn closed_form_level0(mu: f64, sigma: f64, h: f64) -> Result<GaussianTest> {
    if !(h < 1.0) {
        return Err(EtestError::InvalidArgument(format!(
            "the level-0 form needs h < 1, got {h}"
        )));
    }
    Ok(GaussianTest {
        model: GaussianLocation::new(mu, sigma)?,
        h,
        ln_inflation: 0.0,
        level: Level::new(0.0)?,
    })
}

/// The constant `b` for which `b LR^k` has unit null mean:
/// `exp(-k mu^2 (k - 1) / (2 sigma^2))`.
pub fn normalizer_b0(mu: f64, sigma: f64, h: f64) -> Result<f64> {
    if !(h < 1.0) {
        return Err(EtestError::InvalidArgument(format!("need h < 1, got {h}")));
    }
    GaussianLocation::new(mu, sigma)?;
    let k = kappa(h);
    Ok((-k * mu * mu * (k - 1.0) / (2.0 * sigma * sigma)).exp())
}

/// Outcome of the inflation search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inflation {
    /// The inflation factor `b`; `inf` when it overflows.
    #[serde(with = "crate::ext_float")]
    pub b: f64,
    /// `ln b`.
    #[serde(with = "crate::ext_float")]
    pub ln_b: f64,
    /// Null mean of the calibrated test.
    pub null_expectation: f64,
    /// Bisection steps used.
    pub iterations: usize,
}

/// Finds `b >= 1` with `E_{N(0,sigma^2)}[b eps_{0,h} ^ 1/alpha] = 1`.
///
/// Bisects on `ln b`, starting from `[0, 60]` and doubling the upper end
/// while the mean is still below one. Returns the lower end of the final
/// bracket, so the calibrated test never has null mean above one. At
/// `alpha = 1` no finite `b` exists and `b = inf` (the constant test 1) is
/// returned.
pub fn calibrate_inflation(mu: f64, sigma: f64, h: f64, alpha: f64, tol: f64) -> Result<Inflation> {
    if !(h < 1.0) {
        return Err(EtestError::InvalidArgument(format!("need h < 1, got {h}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(EtestError::InvalidLevel(alpha));
    }
    let model = GaussianLocation::new(mu, sigma)?;
    let cap = 1.0 / alpha;
    let mean = |ln_b: f64| capped_null_expectation(model, h, ln_b, cap);
    let at_one = mean(0.0);
    if at_one >= 1.0 {
        return Ok(Inflation {
            b: 1.0,
            ln_b: 0.0,
            null_expectation: at_one,
            iterations: 0,
        });
    }
    if alpha == 1.0 {
        return Ok(Inflation {
            b: f64::INFINITY,
            ln_b: f64::INFINITY,
            null_expectation: 1.0,
            iterations: 0,
        });
    }
    let mut lo = 0.0;
    let mut hi = 60.0;
    while mean(hi) < 1.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(EtestError::ExistenceFailure(format!(
                "no inflation below e^1e12 calibrates h = {h}, alpha = {alpha}"
            )));
        }
    }
    for iterations in 1..=200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(done(lo, mean(lo), iterations));
        }
        if mean(mid) <= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol * lo.max(1.0) {
            return Ok(done(lo, mean(lo), iterations));
        }
    }
    Err(EtestError::NonConvergence(format!(
        "inflation bisection for h = {h}, alpha = {alpha} did not reach tolerance {tol}"
    )))
}

fn done(ln_b: f64, null_expectation: f64, iterations: usize) -> Inflation {
    Inflation {
        b: ln_b.exp(),
        ln_b,
        null_expectation,
        iterations,
    }
}

/// The inflation factor `b_{alpha,h}`; see [`calibrate_inflation`].
pub fn inflation_b_alpha(mu: f64, sigma: f64, h: f64, alpha: f64, tol: f64) -> Result<f64> {
    Ok(calibrate_inflation(mu, sigma, h, alpha, tol)?.b)
}

/// The calibrated level-`alpha` optimum for `h < 1`.
pub fn capped_optimum(mu: f64, sigma: f64, h: f64, alpha: f64, tol: f64) -> Result<GaussianTest> {
    let inf = calibrate_inflation(mu, sigma, h, alpha, tol)?;
    Ok(GaussianTest {
        model: GaussianLocation::new(mu, sigma)?,
        h,
        ln_inflation: inf.ln_b,
        level: Level::new(alpha)?,
    })
}

/// The one-sided Z test: `1/alpha` when `sign(mu) x > sigma z_{1-alpha}`.
pub fn np_z_test(mu: f64, sigma: f64, alpha: f64) -> Result<GaussianTest> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(EtestError::InvalidLevel(alpha));
    }
    if mu == 0.0 {
        return Err(EtestError::InvalidArgument(
            "the one-sided direction needs mu != 0".into(),
        ));
    }
    Ok(GaussianTest {
        model: GaussianLocation::new(mu, sigma)?,
        h: 1.0,
        ln_inflation: 0.0,
        level: Level::new(alpha)?,
    })
}

/// The optimal test for `(mu, sigma, h, alpha)`, dispatching to the level-0
/// form, the calibrated capped form or the Z test.
pub fn optimal_test(mu: f64, sigma: f64, h: f64, alpha: f64, tol: f64) -> Result<GaussianTest> {
    if alpha == 0.0 {
        if h >= 1.0 {
            return Err(EtestError::InvalidArgument(
                "h = 1 at alpha = 0 has no finite optimum".into(),
            ));
        }
        closed_form_level0(mu, sigma, h)
    } else if h == 1.0 {
        np_z_test(mu, sigma, alpha)
    } else {
        capped_optimum(mu, sigma, h, alpha, tol)
    }
}

/// One row of figure data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    /// Observation.
    pub x: f64,
    /// Power exponent.
    pub h: f64,
    /// Test value.
    #[serde(with = "crate::ext_float")]
    pub value: f64,
}

/// Test values over `x_grid` for each `h`, grouped by `h` in list order.
pub fn figure_data(
    mu: f64,
    sigma: f64,
    alpha: f64,
    h_list: &[f64],
    x_grid: &[f64],
) -> Result<(Vec<GaussianTest>, Vec<FigureRow>)> {
    if let Some(x) = x_grid.iter().find(|x| !x.is_finite()) {
        return Err(EtestError::InvalidArgument(format!("grid point {x} is not finite")));
    }
    Level::new(alpha)?;
    let mut tests = Vec::with_capacity(h_list.len());
    let mut rows = Vec::with_capacity(h_list.len() * x_grid.len());
    for &h in h_list {
        let test = optimal_test(mu, sigma, h, alpha, DEFAULT_TOL)?;
        rows.extend(x_grid.iter().map(|&x| FigureRow {
            x,
            h,
            value: test.evaluate(x),
        }));
        tests.push(test);
    }
    Ok((tests, rows))
}

/// Evenly spaced grid `x_min + (x_max - x_min) i / (n - 1)`.
pub fn linear_grid(x_min: f64, x_max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![x_min],
        _ => (0..n)
            .map(|i| x_min + (x_max - x_min) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Monte Carlo null mean of a Gaussian-form test.
pub fn mc_validity_gaussian(test: &GaussianTest, n: usize, seed: u64) -> Result<McEstimate> {
    if n < 10_000 {
        return Err(EtestError::InvalidArgument(format!(
            "need at least 10^4 draws, got {n}"
        )));
    }
    let null = GaussianLocation {
        mu: 0.0,
        sigma: test.model.sigma,
    };
    Ok(mean_estimate(n, seed, |rng| test.evaluate(null.sample(rng))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level0_examples() {
        let t = closed_form_level0(1.0, 1.0, 0.0).unwrap();
        assert!((t.evaluate(1.0) - 0.5f64.exp()).abs() < 1e-15);
        assert!((t.evaluate(1.0) - 1.6487).abs() < 1e-4);
        let t = closed_form_level0(1.0, 1.0, 0.5).unwrap();
        assert!((t.evaluate(2.0) - 2f64.exp()).abs() < 1e-14);
        // h = -1 is the plain likelihood ratio against N(mu/2, sigma^2).
        let t = closed_form_level0(1.0, 1.0, -1.0).unwrap();
        let lr_half = closed_form_level0(0.5, 1.0, 0.0).unwrap();
        for x in [-2.0, 0.0, 0.7, 3.0] {
            assert!((t.evaluate(x) - lr_half.evaluate(x)).abs() < 1e-14);
        }
        assert!(closed_form_level0(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn normalizer_examples() {
        assert!((normalizer_b0(1.0, 1.0, 0.5).unwrap() - (-1f64).exp()).abs() < 1e-16);
        assert_eq!(normalizer_b0(1.0, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(normalizer_b0(0.0, 1.0, 0.3).unwrap(), 1.0);
    }

    #[test]
    fn normalizer_matches_quadrature() {
        for &(mu, sigma, h) in &[(1.0, 1.0, 0.5), (0.5, 2.0, -1.0), (2.0, 1.5, 0.3), (-1.0, 0.7, 0.2)] {
            let b0 = normalizer_b0(mu, sigma, h).unwrap();
            let k = 1.0 / (1.0 - h);
            let f = |x: f64| {
                let ln_lr = (2.0 * x * mu - mu * mu) / (2.0 * sigma * sigma);
                b0 * (k * ln_lr).exp() * crate::normal::pdf(x / sigma) / sigma
            };
            let r = quadrature::integrate(f, -40.0 * sigma, 40.0 * sigma, 1e-14, 1e-14);
            assert!((r.value - 1.0).abs() < 1e-8, "mu={mu} sigma={sigma} h={h}: {}", r.value);
        }
    }

    #[test]
    fn inflation_examples() {
        let b = inflation_b_alpha(1.0, 1.0, 0.5, 0.05, DEFAULT_TOL).unwrap();
        assert!((b - 1.27).abs() <= 0.02, "b = {b}");
        let b = inflation_b_alpha(1.0, 1.0, 0.9, 0.05, DEFAULT_TOL).unwrap();
        assert!((1.25e15..=5e15).contains(&b), "b = {b}");
        let b = inflation_b_alpha(1.0, 1.0, 0.0, 0.05, DEFAULT_TOL).unwrap();
        assert!((b - 1.0).abs() < 1e-2, "b = {b}");
        assert_eq!(inflation_b_alpha(0.0, 1.0, 0.5, 0.05, DEFAULT_TOL).unwrap(), 1.0);
    }

    #[test]
    fn calibration_matches_quadrature_on_a_lattice() {
        for &mu in &[0.5, 1.0, -1.0, 2.0] {
            for &sigma in &[0.5, 1.0, 2.0] {
                for &h in &[-2.0, -0.5, 0.0, 0.5, 0.8] {
                    for &alpha in &[0.01, 0.05, 0.3] {
                        let t = capped_optimum(mu, sigma, h, alpha, DEFAULT_TOL).unwrap();
                        assert!(t.null_expectation() <= 1.0);
                        assert!((t.null_expectation() - 1.0).abs() < 1e-12);
                        let q = quadrature_null_expectation(&t, 1e-13);
                        assert!((q - 1.0).abs() < 1e-6, "mu={mu} s={sigma} h={h} a={alpha}: {q}");
                    }
                }
            }
        }
    }

    #[test]
    fn extreme_exponents_calibrate() {
        let inf = calibrate_inflation(1.0, 1.0, 0.999, 0.05, DEFAULT_TOL).unwrap();
        assert!(inf.ln_b > 1e5 && inf.ln_b.is_finite());
        assert!((inf.null_expectation - 1.0).abs() < 1e-9);
    }

    #[test]
    fn z_test_examples() {
        let t = np_z_test(1.0, 1.0, 0.05).unwrap();
        assert!((t.threshold() - 1.6449).abs() < 1e-4);
        assert_eq!(t.evaluate(1.7), 20.0);
        assert_eq!(t.evaluate(1.6), 0.0);
        assert!((t.null_expectation() - 1.0).abs() < 1e-12);
        assert_eq!(np_z_test(1.0, 1.0, 0.5).unwrap().threshold(), 0.0);
        assert!(np_z_test(0.0, 1.0, 0.05).is_err());
    }

    #[test]
    fn figure_shapes() {
        let grid = linear_grid(0.0, 10.0, 501);
        let (_, rows) = figure_data(1.0, 1.0, 0.0, &[0.0], &grid).unwrap();
        assert!(rows.windows(2).all(|w| w[1].value > w[0].value));
        let at_one = rows.iter().find(|r| r.x == 1.0).unwrap();
        assert!((at_one.value - 0.5f64.exp()).abs() < 1e-15);

        let (tests, rows) = figure_data(1.0, 1.0, 0.05, &[1.0], &grid).unwrap();
        assert!((tests[0].threshold() - 1.6449).abs() < 1e-4);
        for r in &rows {
            let expect = if r.x > tests[0].threshold() { 20.0 } else { 0.0 };
            assert_eq!(r.value, expect);
        }
        assert!(figure_data(1.0, 1.0, 0.0, &[1.0], &grid).is_err());
    }

    #[test]
    fn curves_approach_the_z_test() {
        let grid = linear_grid(0.0, 10.0, 2001);
        let z = np_z_test(1.0, 1.0, 0.05).unwrap();
        let thr = z.threshold();
        let t = capped_optimum(1.0, 1.0, 0.999, 0.05, DEFAULT_TOL).unwrap();
        let worst = grid
            .iter()
            .filter(|x| (*x - thr).abs() > 0.05)
            .map(|&x| (t.evaluate(x) - z.evaluate(x)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.1, "max deviation {worst}");
        // h = 0.9 is already close away from the threshold region.
        let t9 = capped_optimum(1.0, 1.0, 0.9, 0.05, DEFAULT_TOL).unwrap();
        assert!(t9.evaluate(0.5) < 1e-3 && t9.evaluate(3.0) == 20.0);
    }

    #[test]
    fn reciprocal_is_valid_under_the_alternative() {
        for &(mu, sigma) in &[(1.0, 1.0), (0.3, 2.0), (-2.0, 0.5)] {
            let t = closed_form_level0(mu, sigma, 0.0).unwrap();
            let f = |x: f64| (x - mu) / sigma;
            let r = quadrature::integrate(
                |x| crate::normal::pdf(f(x)) / sigma / t.evaluate(x),
                mu - 40.0 * sigma,
                mu + 40.0 * sigma,
                1e-13,
                1e-13,
            );
            assert!(r.value <= 1.0 + 1e-9, "{}", r.value);
        }
    }

    #[test]
    fn monte_carlo_validity() {
        let t = closed_form_level0(1.0, 1.0, 0.0).unwrap();
        let e = mc_validity_gaussian(&t, 1_000_000, 11).unwrap();
        assert!((e.estimate - 1.0).abs() <= 3.0 * e.standard_error);

        let t = capped_optimum(1.0, 1.0, 0.5, 0.05, DEFAULT_TOL).unwrap();
        let e = mc_validity_gaussian(&t, 200_000, 12).unwrap();
        assert!(e.estimate <= 1.0 + 3.0 * e.standard_error);
        assert!((e.estimate - 1.0).abs() <= 3.0 * e.standard_error);

        let doubled = GaussianTest {
            ln_inflation: t.ln_inflation + 2f64.ln(),
            ..t
        };
        let exact = doubled.null_expectation();
        assert!(exact > 1.0);
        let e = mc_validity_gaussian(&doubled, 200_000, 13).unwrap();
        assert!(e.estimate > 1.0 + 3.0 * e.standard_error);
        assert!((e.estimate - exact).abs() <= 4.0 * e.standard_error);
    }
}
