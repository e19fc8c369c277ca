//! Continuous tests on the evidence scale.
//!
//! A level-`alpha` continuous test takes values in `[0, 1/alpha]` and is
//! valid for a null hypothesis when its expectation under every member is at
//! most one. A value equal to the cap `1/alpha` is a full rejection at level
//! `alpha`; a level-0 test is an e-value.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{EtestError, Result};
use crate::measure::{dot_ext, FiniteDistribution, GaussianLocation};
use crate::mc::{mean_estimate, McEstimate};

/// Tolerance on `E_P[test] <= 1` in exact validity checks.
pub const VALIDITY_TOL: f64 = 1e-9;

/// A significance level `alpha` in `[0, 1]` with its cap `1/alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    alpha: f64,
    cap: f64,
}

impl Level {
    /// Builds a level; `alpha = 0` gives an infinite cap.
    pub fn new(alpha: f64) -> Result<Level> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(EtestError::InvalidLevel(alpha));
        }
        let cap = if alpha == 0.0 { f64::INFINITY } else { 1.0 / alpha };
        Ok(Level { alpha, cap })
    }

    /// The level whose cap is exactly `cap` (at least 1, possibly infinite).
    pub fn from_cap(cap: f64) -> Result<Level> {
        if !(cap >= 1.0) {
            return Err(EtestError::InvalidArgument(format!("cap {cap} is below 1")));
        }
        let alpha = if cap.is_infinite() { 0.0 } else { 1.0 / cap };
        Ok(Level { alpha, cap })
    }

    /// The level `alpha`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The cap `1/alpha`.
    pub fn cap(&self) -> f64 {
        self.cap
    }
}

impl Serialize for Level {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.alpha)
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Level, D::Error> {
        let alpha = f64::deserialize(d)?;
        Level::new(alpha).map_err(serde::de::Error::custom)
    }
}

/// Body of a continuous test.
#[derive(Debug, Clone, PartialEq)]
pub enum TestBody {
    /// Per-outcome values on a labelled finite space.
    Tabulated {
        /// Outcome labels.
        outcomes: Vec<String>,
        /// Values, aligned with the labels.
        values: Vec<f64>,
    },
    /// The inflated, capped Gaussian likelihood-ratio form
    /// `b exp((2 k x mu - k^2 mu^2) / (2 sigma^2)) ^ cap` with `k = 1/(1-h)`,
    /// or the one-sided threshold test when `h = 1`.
    Gaussian {
        /// Alternative mean and common standard deviation.
        model: GaussianLocation,
        /// Power exponent.
        h: f64,
        /// Natural log of the inflation factor `b`.
        ln_inflation: f64,
    },
}

/// An evidence-scale test with its level.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousTest {
    level: Level,
    body: TestBody,
}

#[derive(Serialize, Deserialize)]
struct TestRepr {
    alpha: f64,
    #[serde(flatten)]
    body: BodyRepr,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum BodyRepr {
    Tabulated {
        values: Vec<EntryRepr>,
    },
    Gaussian {
        mu: f64,
        sigma: f64,
        h: f64,
        #[serde(with = "crate::ext_float")]
        ln_b: f64,
    },
}

#[derive(Serialize, Deserialize)]
struct EntryRepr {
    outcome: String,
    #[serde(with = "crate::ext_float")]
    value: f64,
}

impl Serialize for ContinuousTest {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let body = match &self.body {
            TestBody::Tabulated { outcomes, values } => BodyRepr::Tabulated {
                values: outcomes
                    .iter()
                    .zip(values)
                    .map(|(o, v)| EntryRepr {
                        outcome: o.clone(),
                        value: *v,
                    })
                    .collect(),
            },
            TestBody::Gaussian {
                model,
                h,
                ln_inflation,
            } => BodyRepr::Gaussian {
                mu: model.mu,
                sigma: model.sigma,
                h: *h,
                ln_b: *ln_inflation,
            },
        };
        TestRepr {
            alpha: self.level.alpha,
            body,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ContinuousTest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = TestRepr::deserialize(d)?;
        let level = Level::new(repr.alpha).map_err(serde::de::Error::custom)?;
        let built = match repr.body {
            BodyRepr::Tabulated { values } => {
                let (outcomes, values) = values.into_iter().map(|e| (e.outcome, e.value)).unzip();
                ContinuousTest::tabulated(level, outcomes, values)
            }
            BodyRepr::Gaussian { mu, sigma, h, ln_b } => GaussianLocation::new(mu, sigma)
                .and_then(|model| ContinuousTest::gaussian(level, model, h, ln_b)),
        };
        built.map_err(serde::de::Error::custom)
    }
}

fn check_value(v: f64, cap: f64) -> Result<()> {
    if v.is_nan() || v < 0.0 {
        return Err(EtestError::InvalidArgument(format!(
            "test value {v} is not a nonnegative number"
        )));
    }
    if v > cap {
        return Err(EtestError::AboveCap { value: v, cap });
    }
    Ok(())
}

impl ContinuousTest {
    /// A tabulated test; every value must lie in `[0, 1/alpha]`.
    pub fn tabulated(level: Level, outcomes: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if outcomes.len() != values.len() {
            return Err(EtestError::InvalidArgument(
                "outcomes and values differ in length".into(),
            ));
        }
        for v in &values {
            check_value(*v, level.cap)?;
        }
        Ok(Self {
            level,
            body: TestBody::Tabulated { outcomes, values },
        })
    }

    /// The constant test `c` on the given outcomes.
    pub fn constant(level: Level, outcomes: &[String], c: f64) -> Result<Self> {
        Self::tabulated(level, outcomes.to_vec(), vec![c; outcomes.len()])
    }

    /// A Gaussian-form test with inflation `e^{ln_inflation}`; see
    /// [`TestBody::Gaussian`].
    pub fn gaussian(level: Level, model: GaussianLocation, h: f64, ln_inflation: f64) -> Result<Self> {
        if !(h <= 1.0) {
            return Err(EtestError::InvalidArgument(format!("h = {h} exceeds 1")));
        }
        if h == 1.0 && level.alpha == 0.0 {
            return Err(EtestError::InvalidArgument(
                "the threshold form needs alpha > 0".into(),
            ));
        }
        if ln_inflation.is_nan() {
            return Err(EtestError::InvalidArgument("log inflation is NaN".into()));
        }
        Ok(Self {
            level,
            body: TestBody::Gaussian {
                model,
                h,
                ln_inflation,
            },
        })
    }

    /// The level.
    pub fn level(&self) -> Level {
        self.level
    }

    /// The body.
    pub fn body(&self) -> &TestBody {
        &self.body
    }

    /// Tabulated values, if any.
    pub fn values(&self) -> Option<&[f64]> {
        match &self.body {
            TestBody::Tabulated { values, .. } => Some(values),
            TestBody::Gaussian { .. } => None,
        }
    }

    /// Tabulated outcome labels, if any.
    pub fn outcomes(&self) -> Option<&[String]> {
        match &self.body {
            TestBody::Tabulated { outcomes, .. } => Some(outcomes),
            TestBody::Gaussian { .. } => None,
        }
    }

    /// Value at a draw.
    pub fn evaluate(&self, draw: Draw) -> Result<f64> {
        match (&self.body, draw) {
            (TestBody::Tabulated { values, .. }, Draw::Outcome(i)) => {
                values.get(i).copied().ok_or_else(|| {
                    EtestError::InvalidArgument(format!("outcome index {i} out of range"))
                })
            }
            (
                TestBody::Gaussian {
                    model,
                    h,
                    ln_inflation,
                },
                Draw::Real(x),
            ) => Ok(crate::gaussian::evaluate_form(
                model,
                *h,
                *ln_inflation,
                self.level,
                x,
            )),
            _ => Err(EtestError::ModelMismatch(
                "draw type does not match the test body".into(),
            )),
        }
    }

    /// Largest value the test can take.
    pub fn max_value(&self) -> f64 {
        match &self.body {
            TestBody::Tabulated { values, .. } => values.iter().copied().fold(0.0, f64::max),
            TestBody::Gaussian { .. } => self.level.cap,
        }
    }

    fn tabulated_parts(&self) -> Result<(&[String], &[f64])> {
        match &self.body {
            TestBody::Tabulated { outcomes, values } => Ok((outcomes, values)),
            TestBody::Gaussian { .. } => Err(EtestError::InvalidArgument(
                "operation needs a tabulated test".into(),
            )),
        }
    }
}

/// `tau / alpha` for a `[0,1]`-valued test at level `alpha > 0`.
pub fn rescale_to_evidence(tau: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(EtestError::InvalidLevel(alpha));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(EtestError::InvalidArgument(format!("tau = {tau} is outside [0, 1]")));
    }
    Ok(tau / alpha)
}

/// Result of an exact validity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    /// `sup_P E_P[test]` over the supplied nulls.
    #[serde(with = "crate::ext_float")]
    pub max_expectation: f64,
    /// `E_P[test]` for each null, in order.
    #[serde(with = "crate::ext_float::vec")]
    pub expectations: Vec<f64>,
    /// Number of nulls with expectation above `1 + VALIDITY_TOL`.
    pub violations: usize,
    /// True when there are no violations.
    pub valid: bool,
}

/// Exact `sup_P E_P[test]` for a tabulated test over finitely many nulls.
pub fn check_validity_exact(test: &ContinuousTest, nulls: &[FiniteDistribution]) -> Result<ValidityReport> {
    if nulls.is_empty() {
        return Err(EtestError::InvalidArgument("empty null hypothesis".into()));
    }
    let (outcomes, values) = test.tabulated_parts()?;
    let mut expectations = Vec::with_capacity(nulls.len());
    for p in nulls {
        p.check_same_space(outcomes)?;
        expectations.push(dot_ext(p.probs(), values));
    }
    let max_expectation = expectations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let violations = expectations
        .iter()
        .filter(|e| !(**e <= 1.0 + VALIDITY_TOL))
        .count();
    Ok(ValidityReport {
        max_expectation,
        expectations,
        violations,
        valid: violations == 0,
    })
}

/// A single observation: an outcome index or a real number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Draw {
    /// Index into a finite sample space.
    Outcome(usize),
    /// A real-valued observation.
    Real(f64),
}

/// A source of seeded draws from a null distribution.
pub trait Sampler: Sync {
    /// Draws one observation.
    fn draw(&self, rng: &mut ChaCha8Rng) -> Draw;
}

impl Sampler for FiniteDistribution {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Draw {
        Draw::Outcome(self.sample_index(rng))
    }
}

impl Sampler for GaussianLocation {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Draw {
        Draw::Real(self.sample(rng))
    }
}

/// Monte Carlo estimate of `E[test]` under the sampler's distribution.
pub fn check_validity_mc<S: Sampler>(
    test: &ContinuousTest,
    sampler: &S,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n < 100 {
        return Err(EtestError::InvalidArgument(format!(
            "need at least 100 draws, got {n}"
        )));
    }
    // Surface a body/sampler mismatch before spending any draws.
    test.evaluate(sampler.draw(&mut crate::mc::substream(seed, u64::MAX)))?;
    Ok(mean_estimate(n, seed, |rng| {
        test.evaluate(sampler.draw(rng))
            .expect("draw type checked above")
    }))
}

fn common_outcomes<'a>(tests: &'a [&ContinuousTest]) -> Result<&'a [String]> {
    let first = tests[0].tabulated_parts()?.0;
    for t in &tests[1..] {
        if t.tabulated_parts()?.0 != first {
            return Err(EtestError::ModelMismatch(
                "tests are tabulated on different outcome sets".into(),
            ));
        }
    }
    Ok(first)
}

/// Convex combination `sum_i w_i eps_i` at level `1 / sum_i (w_i / alpha_i)`.
pub fn combine_convex(tests: &[&ContinuousTest], weights: &[f64]) -> Result<ContinuousTest> {
    if tests.is_empty() || tests.len() != weights.len() {
        return Err(EtestError::InvalidArgument(
            "need one weight per test and at least one test".into(),
        ));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(EtestError::InvalidArgument("weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(EtestError::InvalidArgument(format!(
            "weights sum to {total}, not 1"
        )));
    }
    let outcomes = common_outcomes(tests)?;
    let n = outcomes.len();
    let mut values = vec![0.0; n];
    let mut cap = 0.0;
    for (t, &w) in tests.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        cap += w * t.level.cap;
        for (acc, v) in values.iter_mut().zip(t.tabulated_parts()?.1) {
            *acc += w * v;
        }
    }
    ContinuousTest::tabulated(Level::from_cap(cap)?, outcomes.to_vec(), values)
}

/// The caller's declaration that two tests are mean-independent under the
/// null, which makes their product valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeanIndependent;

fn product_level(a: Level, b: Level) -> Level {
    Level {
        alpha: a.alpha * b.alpha,
        cap: a.cap * b.cap,
    }
}

fn mul_ext(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// Pointwise product of two tests on the same outcomes, at level
/// `alpha_1 alpha_2`.
pub fn combine_product(
    t1: &ContinuousTest,
    t2: &ContinuousTest,
    _independence: MeanIndependent,
) -> Result<ContinuousTest> {
    let pair = [t1, t2];
    let outcomes = common_outcomes(&pair)?;
    let values = t1
        .tabulated_parts()?
        .1
        .iter()
        .zip(t2.tabulated_parts()?.1)
        .map(|(a, b)| mul_ext(*a, *b))
        .collect();
    ContinuousTest::tabulated(product_level(t1.level, t2.level), outcomes.to_vec(), values)
}

/// Product of two tests on the product of their sample spaces, with outcome
/// labels matching [`FiniteDistribution::product`].
pub fn combine_product_space(
    t1: &ContinuousTest,
    t2: &ContinuousTest,
    _independence: MeanIndependent,
) -> Result<ContinuousTest> {
    let (o1, v1) = t1.tabulated_parts()?;
    let (o2, v2) = t2.tabulated_parts()?;
    let mut outcomes = Vec::with_capacity(o1.len() * o2.len());
    let mut values = Vec::with_capacity(o1.len() * o2.len());
    for (a, va) in o1.iter().zip(v1) {
        for (b, vb) in o2.iter().zip(v2) {
            outcomes.push(format!("({a},{b})"));
            values.push(mul_ext(*va, *vb));
        }
    }
    ContinuousTest::tabulated(product_level(t1.level, t2.level), outcomes, values)
}

/// Reading of an evidence value at a level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    /// Zero evidence.
    NoEvidence,
    /// Value at the cap: a full rejection.
    Rejection {
        /// Level of the rejection.
        alpha: f64,
    },
    /// Value below the cap: rejection with probability `alpha * value`.
    PartialRejection {
        /// Level.
        alpha: f64,
        /// Conditional rejection probability.
        probability: f64,
    },
    /// A level-0 test (e-value) with positive value.
    EValue {
        /// The value.
        value: f64,
    },
}

/// Structured interpretation of a test value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpretation {
    /// Verdict at the stated level.
    pub verdict: Verdict,
    /// One-line reading.
    pub message: String,
    /// `1/value`: the level at which the value would be a full rejection.
    #[serde(with = "crate::ext_float::option")]
    pub cross_level: Option<f64>,
    /// Caveat attached to the cross-level reading.
    pub cross_level_note: Option<String>,
}

/// Interprets `value` as evidence at level `alpha`.
pub fn interpret(value: f64, alpha: f64) -> Result<Interpretation> {
    let level = Level::new(alpha)?;
    check_value(value, level.cap)?;
    if value == 0.0 {
        return Ok(Interpretation {
            verdict: Verdict::NoEvidence,
            message: "no evidence".into(),
            cross_level: None,
            cross_level_note: None,
        });
    }
    let cross = Some(1.0 / value);
    let note = Some(
        "reading the value as a rejection at level 1/value relies on the guarantee for \
         data-dependent levels, not on the fixed-level guarantee"
            .to_string(),
    );
    let (verdict, message) = if alpha == 0.0 {
        (Verdict::EValue { value }, format!("e-value {value}"))
    } else if value == level.cap {
        (Verdict::Rejection { alpha }, format!("rejection at level {alpha}"))
    } else {
        let probability = alpha * value;
        (
            Verdict::PartialRejection { alpha, probability },
            format!("rejection with probability {probability} at level {alpha}"),
        )
    };
    Ok(Interpretation {
        verdict,
        message,
        cross_level: cross,
        cross_level_note: note,
    })
}

/// Uniform draw in `[0, 1)` from a generator; shared by randomized audits.
pub(crate) fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>()
}
