//! Standard normal density, distribution function (including a log-space
//! version that stays accurate far in the lower tail) and quantile.

use statrs::distribution::{ContinuousCDF, Normal};
use libm::erfc;
use std::f64::consts::{PI, SQRT_2};

/// Standard normal density.
pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function.
pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Upper tail `1 - cdf(z)`, computed without cancellation.
pub fn sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Natural logarithm of the distribution function.
///
/// Uses `erfc` down to z = -30 and the asymptotic Mills-ratio series below,
/// where `cdf` itself would underflow.
pub fn ln_cdf(z: f64) -> f64 {
    if z > 0.0 {
        (-sf(z)).ln_1p()
    } else if z > -30.0 {
        cdf(z).ln()
    } else {
        let z2 = z * z;
        let mut term = 1.0;
        let mut series = 1.0;
        for k in 1..12 {
            term *= -((2 * k - 1) as f64) / z2;
            series += term;
        }
        -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

/// Standard normal quantile; `-inf` at 0 and `+inf` at 1.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    Normal::new(0.0, 1.0)
        .expect("standard normal parameters are valid")
        .inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((cdf(1.959963984540054) - 0.975).abs() < 1e-14);
        assert!((sf(2.5) - 0.006209665325776132).abs() < 1e-16);
        assert!((quantile(0.95) - 1.6448536269514722).abs() < 1e-12);
        assert_eq!(quantile(0.5), 0.0);
    }

    #[test]
    fn ln_cdf_is_continuous_across_the_switch() {
        for z in [-29.999, -30.0, -30.001] {
            let direct = cdf(z).ln();
            assert!((ln_cdf(z) - direct).abs() < 1e-9 * direct.abs());
        }
        // Far tail: the leading term dominates.
        let z = -1000.0f64;
        let lead = -0.5 * z * z - (-z).ln() - 0.5 * (2.0 * PI).ln();
        assert!((ln_cdf(z) - lead).abs() < 1e-5);
        assert!(ln_cdf(5.0) < 0.0 && ln_cdf(5.0) > -1e-6);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [1e-10, 1e-4, 0.05, 0.3, 0.7, 0.95, 1.0 - 1e-6] {
            assert!((cdf(quantile(p)) - p).abs() < 1e-12 * p.max(1e-3));
        }
    }
}
