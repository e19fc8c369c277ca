//! Probability models on finite sample spaces and the Gaussian location
//! model, together with likelihood ratios, support partitions and
//! expectations over extended reals.
//!
//! Conventions: `0 * inf = 0` in every expectation, and a likelihood ratio
//! q/p is `+inf` where only q is positive, `0` where only p is positive, and
//! marked arbitrary where both vanish.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{EtestError, Result};

/// Tolerance on the total mass of a probability vector.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Anything that assigns a nonnegative mass to each labelled outcome.
pub trait MassFunction {
    /// Outcome labels, in order.
    fn outcomes(&self) -> &[String];
    /// Masses, aligned with [`MassFunction::outcomes`].
    fn masses(&self) -> &[f64];
}

/// A probability mass function over an ordered, labelled finite sample space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution")]
pub struct FiniteDistribution {
    outcomes: Vec<String>,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDistribution {
    outcomes: Vec<String>,
    probs: Vec<f64>,
}

impl TryFrom<RawDistribution> for FiniteDistribution {
    type Error = EtestError;

    fn try_from(raw: RawDistribution) -> Result<Self> {
        FiniteDistribution::new(raw.outcomes, raw.probs)
    }
}

/// Default label for the outcome at `i`: `a`, `b`, ..., `z`, then `o26`, ...
pub fn default_label(i: usize) -> String {
    if i < 26 {
        ((b'a' + i as u8) as char).to_string()
    } else {
        format!("o{i}")
    }
}

impl FiniteDistribution {
    /// Builds a distribution, rejecting negative or non-finite masses,
    /// duplicate labels and totals further than [`PROB_SUM_TOL`] from one.
    pub fn new(outcomes: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(EtestError::InvalidDistribution("empty sample space".into()));
        }
        if outcomes.len() != probs.len() {
            return Err(EtestError::InvalidDistribution(format!(
                "{} outcomes but {} probabilities",
                outcomes.len(),
                probs.len()
            )));
        }
        let mut seen = HashSet::new();
        for o in &outcomes {
            if !seen.insert(o.as_str()) {
                return Err(EtestError::InvalidDistribution(format!(
                    "duplicate outcome label {o:?}"
                )));
            }
        }
        if let Some(bad) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(EtestError::InvalidDistribution(format!(
                "probability {bad} is not a finite nonnegative number"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(EtestError::InvalidDistribution(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { outcomes, probs })
    }

    /// Builds a distribution with default labels `a`, `b`, ...
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        let outcomes = (0..probs.len()).map(default_label).collect();
        Self::new(outcomes, probs.to_vec())
    }

    /// Outcome labels.
    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    /// Probability masses.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Number of outcomes.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    /// Always false: a distribution has at least one outcome.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Errors unless `other` lives on the same ordered outcome set.
    pub fn check_same_space(&self, other: &[String]) -> Result<()> {
        if self.outcomes.as_slice() != other {
            return Err(EtestError::ModelMismatch(format!(
                "outcome sets differ: {:?} vs {:?}",
                self.outcomes, other
            )));
        }
        Ok(())
    }

    /// Product distribution on the pairs `(a,b)`, first factor varying slowest.
    pub fn product(&self, other: &FiniteDistribution) -> FiniteDistribution {
        let mut outcomes = Vec::with_capacity(self.len() * other.len());
        let mut probs = Vec::with_capacity(self.len() * other.len());
        for (a, pa) in self.outcomes.iter().zip(&self.probs) {
            for (b, pb) in other.outcomes.iter().zip(&other.probs) {
                outcomes.push(format!("({a},{b})"));
                probs.push(pa * pb);
            }
        }
        // The products of two normalized vectors sum to one up to a few ulps.
        FiniteDistribution { outcomes, probs }
    }

    /// Draws an outcome index.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > 0.0 {
                acc += p;
                last_positive = i;
                if u < acc {
                    return i;
                }
            }
        }
        last_positive
    }
}

impl MassFunction for FiniteDistribution {
    fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    fn masses(&self) -> &[f64] {
        &self.probs
    }
}

/// A nonnegative measure on a finite sample space, not necessarily normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMeasure {
    /// Outcome labels.
    pub outcomes: Vec<String>,
    /// Masses, aligned with `outcomes`.
    pub masses: Vec<f64>,
    /// Sum of the masses.
    pub total_mass: f64,
}

impl FiniteMeasure {
    /// Builds a measure, rejecting negative or non-finite masses.
    pub fn new(outcomes: Vec<String>, masses: Vec<f64>) -> Result<Self> {
        if outcomes.len() != masses.len() {
            return Err(EtestError::InvalidArgument(
                "outcomes and masses differ in length".into(),
            ));
        }
        if let Some(bad) = masses.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(EtestError::InvalidArgument(format!(
                "mass {bad} is not a finite nonnegative number"
            )));
        }
        let total_mass = masses.iter().sum();
        Ok(Self {
            outcomes,
            masses,
            total_mass,
        })
    }

    /// Converts to a probability distribution when the total mass is one.
    pub fn to_distribution(&self) -> Result<FiniteDistribution> {
        FiniteDistribution::new(self.outcomes.clone(), self.masses.clone())
    }
}

impl MassFunction for FiniteMeasure {
    fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    fn masses(&self) -> &[f64] {
        &self.masses
    }
}

/// A Gaussian with known mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGaussian")]
pub struct GaussianLocation {
    /// Mean.
    pub mu: f64,
    /// Standard deviation, strictly positive.
    pub sigma: f64,
}

#[derive(Deserialize)]
struct RawGaussian {
    mu: f64,
    sigma: f64,
}

impl TryFrom<RawGaussian> for GaussianLocation {
    type Error = EtestError;

    fn try_from(raw: RawGaussian) -> Result<Self> {
        GaussianLocation::new(raw.mu, raw.sigma)
    }
}

impl GaussianLocation {
    /// Builds the model, requiring a finite mean and `sigma > 0`.
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(EtestError::InvalidArgument(format!("mean {mu} is not finite")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(EtestError::InvalidArgument(format!(
                "standard deviation {sigma} must be positive and finite"
            )));
        }
        Ok(Self { mu, sigma })
    }

    /// Density at `x`.
    pub fn density(&self, x: f64) -> f64 {
        crate::normal::pdf((x - self.mu) / self.sigma) / self.sigma
    }

    /// Draws one observation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        let z: f64 = StandardNormal.sample(rng);
        self.mu + self.sigma * z
    }
}

/// One entry of a likelihood ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioEntry {
    /// A value in `[0, +inf]`.
    Value(#[serde(with = "crate::ext_float")] f64),
    /// Both densities vanish; the ratio is arbitrary.
    Arbitrary,
}

/// Per-outcome likelihood ratio with the extended-value conventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedRatio {
    /// Entries aligned with the outcome set.
    pub entries: Vec<RatioEntry>,
}

impl ExtendedRatio {
    /// Numeric values with arbitrary entries resolved to 0.
    pub fn resolved(&self) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| match e {
                RatioEntry::Value(v) => *v,
                RatioEntry::Arbitrary => 0.0,
            })
            .collect()
    }

    /// True when the entry at `i` carries the arbitrary marker.
    pub fn is_arbitrary(&self, i: usize) -> bool {
        matches!(self.entries[i], RatioEntry::Arbitrary)
    }
}

/// Likelihood ratio q/p per outcome.
pub fn likelihood_ratio(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<ExtendedRatio> {
    p.check_same_space(q.outcomes())?;
    let entries = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(&pi, &qi)| ratio_entry(pi, qi))
        .collect();
    Ok(ExtendedRatio { entries })
}

pub(crate) fn ratio_entry(p: f64, q: f64) -> RatioEntry {
    match (p > 0.0, q > 0.0) {
        (true, true) => RatioEntry::Value(q / p),
        (false, true) => RatioEntry::Value(f64::INFINITY),
        (true, false) => RatioEntry::Value(0.0),
        (false, false) => RatioEntry::Arbitrary,
    }
}

/// The four support regions of a pair (p, q), as outcome indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportPartition {
    /// Outcomes with p > 0 and q > 0.
    pub common: Vec<usize>,
    /// Outcomes with p = 0 and q > 0.
    pub q_only: Vec<usize>,
    /// Outcomes with p > 0 and q = 0.
    pub p_only: Vec<usize>,
    /// Outcomes with p = 0 and q = 0.
    pub neither: Vec<usize>,
}

/// Splits the sample space by the signs of p and q.
pub fn support_partition(
    p: &FiniteDistribution,
    q: &FiniteDistribution,
) -> Result<SupportPartition> {
    p.check_same_space(q.outcomes())?;
    let mut part = SupportPartition {
        common: vec![],
        q_only: vec![],
        p_only: vec![],
        neither: vec![],
    };
    for (i, (&pi, &qi)) in p.probs().iter().zip(q.probs()).enumerate() {
        match (pi > 0.0, qi > 0.0) {
            (true, true) => part.common.push(i),
            (false, true) => part.q_only.push(i),
            (true, false) => part.p_only.push(i),
            (false, false) => part.neither.push(i),
        }
    }
    Ok(part)
}

/// Sum of mass times value with `0 * inf = 0`; +inf propagates from positive mass.
pub fn expectation<M: MassFunction + ?Sized>(d: &M, values: &[f64]) -> Result<f64> {
    if values.len() != d.masses().len() {
        return Err(EtestError::ModelMismatch(format!(
            "{} values for {} outcomes",
            values.len(),
            d.masses().len()
        )));
    }
    Ok(dot_ext(d.masses(), values))
}

/// `sum_i w_i v_i` with the convention `0 * v = 0` for every v.
pub(crate) fn dot_ext(weights: &[f64], values: &[f64]) -> f64 {
    weights
        .iter()
        .zip(values)
        .filter(|(w, _)| **w != 0.0)
        .map(|(w, v)| w * v)
        .sum()
}
