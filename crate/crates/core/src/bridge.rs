//! Conversions among e-values, continuous tests, binary tests, randomized
//! decisions and p-values, the deterministic Markov chain of inequalities,
//! and Monte Carlo audits of p-value validity and of the cross-level
//! guarantee.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EtestError, Result};
use crate::evidence::{uniform, ContinuousTest, Sampler};
use crate::mc::{mean_estimate, substream, McEstimate, CHUNK};

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(EtestError::InvalidLevel(alpha))
    }
}

fn check_nonnegative(x: f64, what: &str) -> Result<()> {
    if x >= 0.0 {
        Ok(())
    } else {
        Err(EtestError::InvalidArgument(format!("{what} = {x} must be nonnegative")))
    }
}

/// `min(e, 1/alpha)`: an e-value as a level-`alpha` continuous test.
pub fn e_to_continuous(e: f64, alpha: f64) -> Result<f64> {
    check_nonnegative(e, "e")?;
    check_alpha(alpha)?;
    Ok(e.min(1.0 / alpha))
}

/// `1/alpha` when `alpha e >= 1`, else 0: an e-value as a binary test.
pub fn e_to_binary(e: f64, alpha: f64) -> Result<f64> {
    check_nonnegative(e, "e")?;
    check_alpha(alpha)?;
    Ok(if alpha * e >= 1.0 { 1.0 / alpha } else { 0.0 })
}

/// Randomized decision: reject when `u <= alpha * epsilon`. A zero test
/// value never rejects.
pub fn randomize(epsilon: f64, alpha: f64, u: f64) -> Result<bool> {
    check_nonnegative(epsilon, "epsilon")?;
    check_alpha(alpha)?;
    let prob = alpha * epsilon;
    if prob > 1.0 + 1e-12 {
        return Err(EtestError::AboveCap {
            value: epsilon,
            cap: 1.0 / alpha,
        });
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(EtestError::InvalidArgument(format!("uniform draw {u} outside [0, 1]")));
    }
    Ok(prob > 0.0 && u <= prob)
}

/// A family of binary tests indexed by the level, sorted in the level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PValueFamily {
    /// Rejects at level `alpha` iff `alpha >= p0`.
    Threshold {
        /// Threshold; values above 1 never reject on `(0, 1]`.
        #[serde(with = "crate::ext_float")]
        p0: f64,
    },
    /// Decisions on an increasing grid of levels.
    Grid {
        /// Strictly increasing levels in `(0, 1]`.
        alphas: Vec<f64>,
        /// Rejection at each level.
        rejects: Vec<bool>,
    },
}

/// Output of [`p_from_family`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyP {
    /// Smallest rejecting level, `+inf` when none rejects.
    #[serde(with = "crate::ext_float")]
    pub p: f64,
    /// `sup_alpha eps_alpha` with `eps_alpha = 1/alpha` on rejection, 0 otherwise.
    #[serde(with = "crate::ext_float")]
    pub sup_epsilon: f64,
    /// True when `p` equals `1 / sup_epsilon` up to the rounding of one division.
    pub identity_holds: bool,
}

/// The p-value of a sorted family and the reciprocal-supremum check.
pub fn p_from_family(family: &PValueFamily) -> Result<FamilyP> {
    let (p, sup_epsilon) = match family {
        PValueFamily::Threshold { p0 } => {
            check_nonnegative(*p0, "p0")?;
            if *p0 > 1.0 {
                (f64::INFINITY, 0.0)
            } else {
                (*p0, 1.0 / p0)
            }
        }
        PValueFamily::Grid { alphas, rejects } => {
            if alphas.len() != rejects.len() {
                return Err(EtestError::InvalidArgument("alphas and rejects differ in length".into()));
            }
            if alphas.windows(2).any(|w| !(w[0] < w[1])) || alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
                return Err(EtestError::InvalidArgument("levels must increase strictly within (0, 1]".into()));
            }
            if rejects.windows(2).any(|w| w[0] && !w[1]) {
                return Err(EtestError::InvalidArgument(
                    "unsorted family: a rejection is followed by a non-rejection at a larger level".into(),
                ));
            }
            match rejects.iter().position(|r| *r) {
                Some(i) => (alphas[i], alphas[i..].iter().map(|a| 1.0 / a).fold(0.0, f64::max)),
                None => (f64::INFINITY, 0.0),
            }
        }
    };
    let back = 1.0 / sup_epsilon;
    let identity_holds = back == p || (back - p).abs() <= f64::EPSILON * p;
    Ok(FamilyP {
        p,
        sup_epsilon,
        identity_holds,
    })
}

/// `1/epsilon`, with `1/0 = inf` and `1/inf = 0`.
pub fn strong_p(epsilon: f64) -> Result<f64> {
    check_nonnegative(epsilon, "epsilon")?;
    Ok(1.0 / epsilon)
}

/// The chain `I{aX >= 1} = floor(aX ^ 1) <= aX ^ 1 <= aX`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    /// `I{alpha x >= 1}`.
    pub indicator: f64,
    /// `floor(min(alpha x, 1))`.
    pub floor: f64,
    /// `min(alpha x, 1)`.
    pub min: f64,
    /// `alpha x`.
    #[serde(with = "crate::ext_float")]
    pub product: f64,
    /// True when the chain holds.
    pub ordered: bool,
}

/// Evaluates the deterministic Markov chain at `(x, alpha)`.
pub fn markov_chain_values(x: f64, alpha: f64) -> Result<MarkovChain> {
    check_nonnegative(x, "x")?;
    check_alpha(alpha)?;
    let product = alpha * x;
    let indicator = if product >= 1.0 { 1.0 } else { 0.0 };
    let min = product.min(1.0);
    let floor = min.floor();
    Ok(MarkovChain {
        indicator,
        floor,
        min,
        product,
        ordered: indicator == floor && floor <= min && min <= product,
    })
}

/// `sup_a I{a x >= 1} / a`, attained at `a = 1/x`; equals `x`.
pub fn markov_equality(x: f64) -> Result<f64> {
    check_nonnegative(x, "x")?;
    if x == 0.0 {
        return Ok(0.0);
    }
    let a = 1.0 / x;
    // 1/x may round so that a x falls just below 1; step up to the next float.
    let a = if a * x >= 1.0 { a } else { f64::from_bits(a.to_bits() + 1) };
    Ok(1.0 / a)
}

/// True when `a` and `b` are within `ulps` units in the last place.
pub fn within_ulps(a: f64, b: f64, ulps: u64) -> bool {
    if a == b {
        return true;
    }
    if !(a.is_finite() && b.is_finite()) || a.signum() != b.signum() {
        return false;
    }
    a.to_bits().abs_diff(b.to_bits()) <= ulps
}

/// One level of [`weak_p_audit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakPRow {
    /// Level.
    pub alpha: f64,
    /// Empirical `P(p <= alpha)`.
    pub frequency: f64,
    /// `sqrt(alpha (1 - alpha) / n)`.
    pub standard_error: f64,
    /// True when the frequency exceeds `alpha + 3 SE`.
    pub violation: bool,
}

/// Empirical exceedance `P(p <= alpha)` on a grid of levels from `n`
/// seeded draws of `sampler`.
pub fn weak_p_audit<F>(sampler: F, alpha_grid: &[f64], n: usize, seed: u64) -> Result<Vec<WeakPRow>>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    if n < 10_000 {
        return Err(EtestError::InvalidArgument(format!("need at least 10000 draws, got {n}")));
    }
    for a in alpha_grid {
        check_alpha(*a)?;
    }
    let chunks = n.div_ceil(CHUNK);
    let counts: Vec<Vec<u64>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, k as u64);
            let mut c = vec![0u64; alpha_grid.len()];
            for _ in 0..CHUNK.min(n - k * CHUNK) {
                let p = sampler(&mut rng);
                for (slot, a) in c.iter_mut().zip(alpha_grid) {
                    if p <= *a {
                        *slot += 1;
                    }
                }
            }
            c
        })
        .collect();
    Ok(alpha_grid
        .iter()
        .enumerate()
        .map(|(j, &alpha)| {
            let hits: u64 = counts.iter().map(|c| c[j]).sum();
            let frequency = hits as f64 / n as f64;
            let standard_error = (alpha * (1.0 - alpha) / n as f64).sqrt();
            WeakPRow {
                alpha,
                frequency,
                standard_error,
                violation: frequency > alpha + 3.0 * standard_error,
            }
        })
        .collect())
}

/// Output of [`cross_level_audit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossLevelAudit {
    /// Estimate of `E[reject / alpha_tilde]` under the rule that reports
    /// level `alpha_tilde = min(1, 1/eps)` and rejects with probability
    /// `alpha_tilde * eps`.
    pub raw: McEstimate,
    /// Estimate of `E[eps]`.
    pub reduced: McEstimate,
    /// True when the raw estimate exceeds `1 + 3 SE`.
    pub raw_flagged: bool,
    /// True when the reduced estimate exceeds `1 + 3 SE`.
    pub reduced_flagged: bool,
}

/// Audits the data-dependent level reading of a test under a null sampler.
pub fn cross_level_audit<S: Sampler>(test: &ContinuousTest, sampler: &S, n: usize, seed: u64) -> Result<CrossLevelAudit> {
    if !(test.level().alpha() > 0.0) {
        return Err(EtestError::InvalidLevel(test.level().alpha()));
    }
    if n < 100 {
        return Err(EtestError::InvalidArgument(format!("need at least 100 draws, got {n}")));
    }
    test.evaluate(sampler.draw(&mut substream(seed, u64::MAX)))?;
    let raw = mean_estimate(n, seed, |rng| {
        let eps = test.evaluate(sampler.draw(rng)).expect("draw type checked above");
        let u = uniform(rng);
        if eps == 0.0 {
            return 0.0;
        }
        let alpha_tilde = (1.0 / eps).min(1.0);
        if u <= (alpha_tilde * eps).min(1.0) {
            1.0 / alpha_tilde
        } else {
            0.0
        }
    });
    let reduced = mean_estimate(n, seed, |rng| {
        test.evaluate(sampler.draw(rng)).expect("draw type checked above")
    });
    let flag = |m: &McEstimate| m.estimate > 1.0 + 3.0 * m.standard_error;
    Ok(CrossLevelAudit {
        raw_flagged: flag(&raw),
        reduced_flagged: flag(&reduced),
        raw,
        reduced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::Level;
    use crate::measure::FiniteDistribution;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn conversions() {
        assert_eq!(e_to_continuous(25.0, 0.05).unwrap(), 20.0);
        assert_eq!(e_to_continuous(10.0, 0.05).unwrap(), 10.0);
        assert_eq!(e_to_continuous(f64::INFINITY, 0.05).unwrap(), 20.0);
        assert_eq!(e_to_binary(25.0, 0.05).unwrap(), 20.0);
        assert_eq!(e_to_binary(10.0, 0.05).unwrap(), 0.0);
        assert_eq!(e_to_binary(20.0, 0.05).unwrap(), 20.0);
        assert!(e_to_binary(-1.0, 0.05).is_err());
        assert!(e_to_continuous(1.0, 0.0).is_err());
    }

    #[test]
    fn randomization() {
        assert!(randomize(20.0, 0.05, 0.3).unwrap());
        assert!(randomize(10.0, 0.05, 0.4).unwrap());
        assert!(!randomize(10.0, 0.05, 0.6).unwrap());
        assert!(!randomize(0.0, 0.05, 0.0).unwrap());
        assert!(randomize(25.0, 0.05, 0.5).is_err());
    }

    #[test]
    fn families() {
        let r = p_from_family(&PValueFamily::Threshold { p0: 0.03 }).unwrap();
        assert_eq!(r.p, 0.03);
        assert!((r.sup_epsilon - 100.0 / 3.0).abs() < 1e-12);
        assert!(r.identity_holds);
        let r = p_from_family(&PValueFamily::Threshold { p0: 2.0 }).unwrap();
        assert!(r.p.is_infinite() && r.sup_epsilon == 0.0 && r.identity_holds);
        let never = PValueFamily::Grid {
            alphas: vec![0.01, 0.05, 0.1],
            rejects: vec![false; 3],
        };
        let r = p_from_family(&never).unwrap();
        assert!(r.p.is_infinite() && r.sup_epsilon == 0.0);
        let always = PValueFamily::Grid {
            alphas: vec![0.01, 0.05, 0.1],
            rejects: vec![true; 3],
        };
        let r = p_from_family(&always).unwrap();
        assert_eq!(r.p, 0.01);
        assert_eq!(r.sup_epsilon, 100.0);
        let unsorted = PValueFamily::Grid {
            alphas: vec![0.01, 0.05],
            rejects: vec![true, false],
        };
        assert!(p_from_family(&unsorted).is_err());
    }

    #[test]
    fn strong_p_values() {
        assert_eq!(strong_p(20.0).unwrap(), 0.05);
        assert_eq!(strong_p(10.0).unwrap(), 0.1);
        assert!(strong_p(0.0).unwrap().is_infinite());
        assert_eq!(strong_p(f64::INFINITY).unwrap(), 0.0);
    }

    #[test]
    fn markov_examples() {
        let m = markov_chain_values(30.0, 0.05).unwrap();
        assert_eq!((m.indicator, m.floor, m.min), (1.0, 1.0, 1.0));
        assert!((m.product - 1.5).abs() < 1e-15);
        let m = markov_chain_values(10.0, 0.05).unwrap();
        assert_eq!((m.indicator, m.floor), (0.0, 0.0));
        assert!((m.min - 0.5).abs() < 1e-15 && (m.product - 0.5).abs() < 1e-15);
        let m = markov_chain_values(0.0, 0.3).unwrap();
        assert_eq!((m.indicator, m.floor, m.min, m.product), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(markov_equality(0.0).unwrap(), 0.0);
        assert!(within_ulps(markov_equality(3.0).unwrap(), 3.0, 4));
    }

    #[test]
    fn weak_p_examples() {
        let grid = [0.01, 0.05, 0.1, 0.5];
        let rows = weak_p_audit(|rng| rng.random::<f64>(), &grid, 100_000, 3).unwrap();
        assert!(rows.iter().all(|r| !r.violation));
        let rows = weak_p_audit(|rng| 0.5 * rng.random::<f64>(), &grid, 100_000, 3).unwrap();
        assert!(rows[0].violation && rows[1].violation);
        // p = 1/eps for the likelihood ratio of a coin: strong, hence weak.
        let rows = weak_p_audit(
            |rng| if rng.random::<f64>() < 0.5 { 1.0 / 1.8 } else { 1.0 / 0.2 },
            &grid,
            100_000,
            4,
        )
        .unwrap();
        assert!(rows.iter().all(|r| !r.violation));
        assert!(weak_p_audit(|_| 0.5, &grid, 10, 1).is_err());
    }

    #[test]
    fn cross_level_examples() {
        let p = FiniteDistribution::from_probs(&[0.5, 0.5]).unwrap();
        let lvl = Level::new(0.25).unwrap();
        let one = ContinuousTest::constant(lvl, p.outcomes(), 1.0).unwrap();
        let a = cross_level_audit(&one, &p, 10_000, 1).unwrap();
        assert_eq!(a.raw.estimate, 1.0);
        assert_eq!(a.reduced.estimate, 1.0);

        let t = ContinuousTest::tabulated(lvl, p.outcomes().to_vec(), vec![1.8, 0.2]).unwrap();
        let a = cross_level_audit(&t, &p, 200_000, 2).unwrap();
        assert!(!a.raw_flagged && !a.reduced_flagged);
        assert!((a.raw.estimate - 1.0).abs() < 4.0 * a.raw.standard_error);

        let bad = ContinuousTest::tabulated(lvl, p.outcomes().to_vec(), vec![2.2, 0.2]).unwrap();
        let a = cross_level_audit(&bad, &p, 200_000, 2).unwrap();
        assert!(a.raw_flagged && a.reduced_flagged);
    }

    proptest! {
        #[test]
        fn rounding_order(e in prop_oneof![Just(0.0), 0.0f64..1e6, Just(f64::INFINITY)], alpha in 1e-6f64..=1.0) {
            let b = e_to_binary(e, alpha).unwrap();
            let c = e_to_continuous(e, alpha).unwrap();
            prop_assert!(b <= c && c <= e);
        }

        #[test]
        fn markov_chain_is_ordered(x in 0.0f64..1e6, alpha in 1e-6f64..=1.0) {
            prop_assert!(markov_chain_values(x, alpha).unwrap().ordered);
        }

        #[test]
        fn reciprocal_duality(eps in 1e-300f64..1e300) {
            let back = strong_p(strong_p(eps).unwrap()).unwrap();
            prop_assert!(within_ulps(back, eps, 2));
        }

        #[test]
        fn threshold_identity(p0 in 1e-9f64..=1.0) {
            let family = PValueFamily::Threshold { p0 };
            let r = p_from_family(&family).unwrap();
            prop_assert!(r.identity_holds);
        }
    }
}
