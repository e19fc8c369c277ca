//! Sequential testing with running products of step tests: the wealth
//! process `M_t`, the capped construction that picks the step level
//! `alpha_t = alpha M_{t-1}` so wealth never exceeds `1/alpha`, an exhaustive
//! optional-stopping audit on small outcome trees, and seeded path
//! simulation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EtestError, Result};
use crate::evidence::{ContinuousTest, Level};
use crate::mc::substream;
use crate::measure::FiniteDistribution;
use crate::simple_opt::optimal_values;
use crate::utility::Utility;

/// One step of a wealth process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Multiplicative factor applied at this step.
    #[serde(with = "crate::ext_float")]
    pub factor: f64,
    /// Level of the step test, when known.
    pub level: Option<f64>,
}

/// State of a wealth process `M_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EProcessState {
    t: usize,
    #[serde(with = "crate::ext_float")]
    wealth: f64,
    alpha: Level,
    history: Vec<StepRecord>,
}

impl EProcessState {
    /// `M_0 = 1` with target level `alpha`.
    pub fn new(alpha: Level) -> Self {
        Self {
            t: 0,
            wealth: 1.0,
            alpha,
            history: vec![],
        }
    }

    /// Time index.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Current wealth `M_t`.
    pub fn wealth(&self) -> f64 {
        self.wealth
    }

    /// Target level.
    pub fn alpha(&self) -> Level {
        self.alpha
    }

    /// Per-step records.
    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    /// Multiplies wealth by `factor`.
    pub fn update(&self, factor: f64) -> Result<Self> {
        self.update_with_level(factor, None)
    }

    fn update_with_level(&self, factor: f64, level: Option<f64>) -> Result<Self> {
        if !(factor >= 0.0) {
            return Err(EtestError::InvalidArgument(format!("factor {factor} is negative")));
        }
        let mut next = self.clone();
        next.t += 1;
        next.wealth = if self.wealth == 0.0 { 0.0 } else { self.wealth * factor };
        next.history.push(StepRecord { factor, level });
        Ok(next)
    }
}

/// I.i.d. step laws: null and alternative on a shared outcome set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamModel {
    /// Null step law.
    pub null: FiniteDistribution,
    /// Alternative step law.
    pub alt: FiniteDistribution,
}

impl StreamModel {
    /// Checks that both laws share an outcome set.
    pub fn new(null: FiniteDistribution, alt: FiniteDistribution) -> Result<Self> {
        null.check_same_space(alt.outcomes())?;
        Ok(Self { null, alt })
    }

    /// Number of outcomes per step.
    pub fn len(&self) -> usize {
        self.null.len()
    }

    /// True when there are no outcomes.
    pub fn is_empty(&self) -> bool {
        self.null.is_empty()
    }
}

/// Chooses the per-outcome factors of the next step from the current wealth.
pub trait StepStrategy: Sync {
    /// Factors for each outcome given wealth `M_{t-1}` and target `alpha`.
    fn factors(&self, stream: &StreamModel, wealth: f64, alpha: f64) -> Result<Vec<f64>>;

    /// Level of the step test, if the strategy has one.
    fn step_level(&self, _wealth: f64, _alpha: f64) -> Option<f64> {
        None
    }
}

/// The capped construction with the optimal step test for a utility.
#[derive(Debug, Clone)]
pub struct Fischer {
    /// Step utility.
    pub utility: Utility,
}

impl Fischer {
    /// Log-utility steps.
    pub fn log() -> Self {
        Self { utility: Utility::log() }
    }
}

impl StepStrategy for Fischer {
    fn factors(&self, stream: &StreamModel, wealth: f64, alpha: f64) -> Result<Vec<f64>> {
        Ok(fischer_factors(stream, &self.utility, wealth, alpha)?.0)
    }

    fn step_level(&self, wealth: f64, alpha: f64) -> Option<f64> {
        Some((alpha * wealth).min(1.0))
    }
}

/// The same factors at every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedFactors {
    /// Factor per outcome.
    pub factors: Vec<f64>,
}

impl StepStrategy for FixedFactors {
    fn factors(&self, stream: &StreamModel, _wealth: f64, _alpha: f64) -> Result<Vec<f64>> {
        if self.factors.len() != stream.len() {
            return Err(EtestError::ModelMismatch(format!(
                "{} factors for {} outcomes",
                self.factors.len(),
                stream.len()
            )));
        }
        Ok(self.factors.clone())
    }
}

/// The uncapped likelihood ratio `q/p`, the log-optimal level-0 step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LikelihoodRatio;

impl StepStrategy for LikelihoodRatio {
    fn factors(&self, stream: &StreamModel, _wealth: f64, _alpha: f64) -> Result<Vec<f64>> {
        Ok(stream
            .null
            .probs()
            .iter()
            .zip(stream.alt.probs())
            .map(|(p, q)| match (*p > 0.0, *q > 0.0) {
                (true, _) => q / p,
                (false, true) => f64::INFINITY,
                (false, false) => 0.0,
            })
            .collect())
    }
}

fn fischer_factors(stream: &StreamModel, u: &Utility, wealth: f64, alpha: f64) -> Result<(Vec<f64>, f64)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(EtestError::InvalidLevel(alpha));
    }
    if wealth == 0.0 {
        return Err(EtestError::Absorbed);
    }
    let alpha_t = (alpha * wealth).min(1.0);
    let mut values = optimal_values(stream.null.probs(), stream.alt.probs(), u, 1.0 / alpha_t)?;
    // Guard the ceiling against rounding in 1/alpha_t.
    let ceiling = 1.0 / alpha;
    for v in values.iter_mut() {
        if wealth * *v > ceiling {
            *v = ceiling / wealth;
            // ceiling / wealth may itself round so that the product lands an ulp high.
            while wealth * *v > ceiling {
                *v = f64::from_bits(v.to_bits() - 1);
            }
        }
    }
    Ok((values, alpha_t))
}

/// Output of [`fischer_step`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FischerStep {
    /// Factor per outcome.
    pub factors: Vec<f64>,
    /// Level of the step test, `min(1, alpha M_{t-1})`.
    pub alpha_t: f64,
}

/// The next step of the capped construction: the optimal step test at level
/// `min(1, alpha M_{t-1})`, so that `M_{t-1} * factor <= 1/alpha`.
pub fn fischer_step(state: &EProcessState, stream: &StreamModel, utility: &Utility) -> Result<FischerStep> {
    let (factors, alpha_t) = fischer_factors(stream, utility, state.wealth, state.alpha.alpha())?;
    Ok(FischerStep { factors, alpha_t })
}

/// Applies a strategy step for the observed outcome index.
pub fn advance(state: &EProcessState, stream: &StreamModel, strategy: &dyn StepStrategy, outcome: usize) -> Result<EProcessState> {
    let alpha = state.alpha.alpha();
    let factors = strategy.factors(stream, state.wealth, alpha)?;
    let f = *factors
        .get(outcome)
        .ok_or_else(|| EtestError::InvalidArgument(format!("outcome index {outcome} out of range")))?;
    state.update_with_level(f, strategy.step_level(state.wealth, alpha))
}

/// Largest per-step outcome count for the stopping audit.
pub const MAX_AUDIT_OUTCOMES: usize = 3;

/// Largest horizon for the stopping audit.
pub const MAX_AUDIT_HORIZON: usize = 8;

/// Result of [`optional_stopping_audit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingAudit {
    /// `max_tau E_null[M_tau]` over stopping times `1 <= tau <= T`.
    pub max_expected_wealth: f64,
    /// Tree nodes visited.
    pub nodes: usize,
    /// True when the maximum is at most `1 + 1e-9`.
    pub valid: bool,
}

/// Maximizes `E_null[M_tau]` over all stopping times `1 <= tau <= T` by
/// backward induction on the outcome tree: at each node the best rule
/// either stops or continues, whichever has the larger value.
pub fn optional_stopping_audit(
    stream: &StreamModel,
    strategy: &dyn StepStrategy,
    alpha: f64,
    horizon: usize,
) -> Result<StoppingAudit> {
    if stream.len() > MAX_AUDIT_OUTCOMES || horizon > MAX_AUDIT_HORIZON || horizon == 0 {
        return Err(EtestError::TooLarge(format!(
            "audit needs at most {MAX_AUDIT_OUTCOMES} outcomes and 1 <= T <= {MAX_AUDIT_HORIZON}, got {} and {horizon}",
            stream.len()
        )));
    }
    let mut nodes = 0;
    let value = continue_value(stream, strategy, alpha, 1.0, horizon, &mut nodes)?;
    Ok(StoppingAudit {
        max_expected_wealth: value,
        nodes,
        valid: value <= 1.0 + 1e-9,
    })
}

/// Expected value of continuing one step from wealth `m` and then acting optimally.
fn continue_value(
    stream: &StreamModel,
    strategy: &dyn StepStrategy,
    alpha: f64,
    m: f64,
    remaining: usize,
    nodes: &mut usize,
) -> Result<f64> {
    *nodes += 1;
    if m == 0.0 {
        return Ok(0.0);
    }
    let factors = strategy.factors(stream, m, alpha)?;
    let mut total = 0.0;
    for (p, f) in stream.null.probs().iter().zip(&factors) {
        if *p == 0.0 {
            continue;
        }
        let child = m * f;
        let v = if remaining == 1 {
            child
        } else {
            child.max(continue_value(stream, strategy, alpha, child, remaining - 1, nodes)?)
        };
        total += p * v;
    }
    Ok(total)
}

/// Which law generates the simulated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Under {
    /// The null step law.
    Null,
    /// The alternative step law.
    Alternative,
}

/// One simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    /// Path index.
    pub path: usize,
    /// `sup_t M_t`.
    #[serde(with = "crate::ext_float")]
    pub max_wealth: f64,
    /// `M_T`.
    #[serde(with = "crate::ext_float")]
    pub terminal: f64,
}

/// Summary of [`simulate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    /// Number of paths.
    pub n_paths: usize,
    /// Horizon `T`.
    pub horizon: usize,
    /// Data-generating law.
    pub under: Under,
    /// Fraction of paths with `sup_t M_t >= 1/alpha`.
    pub crossing_frequency: f64,
    /// Binomial standard error `sqrt(alpha (1 - alpha) / n)`.
    pub crossing_se: f64,
    /// True when the crossing frequency is at most `alpha + 3 SE`.
    pub crossing_within_bound: bool,
    /// Largest wealth seen on any path.
    #[serde(with = "crate::ext_float")]
    pub max_wealth: f64,
    /// Terminal wealth quantiles at 5, 25, 50, 75 and 95 percent.
    #[serde(with = "crate::ext_float::vec")]
    pub terminal_quantiles: Vec<f64>,
    /// Mean of `ln M_T`.
    #[serde(with = "crate::ext_float")]
    pub mean_log_growth: f64,
    /// Standard error of the mean of `ln M_T`.
    #[serde(with = "crate::ext_float")]
    pub log_growth_se: f64,
}

/// Simulates `n_paths` paths of length `horizon`. Path `i` draws from the
/// substream `(seed, i)`, so results do not depend on the worker count.
pub fn simulate(
    stream: &StreamModel,
    strategy: &dyn StepStrategy,
    alpha: f64,
    n_paths: usize,
    horizon: usize,
    under: Under,
    seed: u64,
) -> Result<(SimulationSummary, Vec<PathRecord>)> {
    if n_paths < 1000 {
        return Err(EtestError::InvalidArgument(format!("n_paths = {n_paths} must be at least 1000")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(EtestError::InvalidLevel(alpha));
    }
    let law = match under {
        Under::Null => &stream.null,
        Under::Alternative => &stream.alt,
    };
    let paths: Vec<PathRecord> = (0..n_paths)
        .into_par_iter()
        .map(|path| -> Result<PathRecord> {
            let mut rng = substream(seed, path as u64);
            let mut m: f64 = 1.0;
            let mut max_wealth = m;
            for _ in 0..horizon {
                if m == 0.0 {
                    break;
                }
                let factors = strategy.factors(stream, m, alpha)?;
                m *= factors[law.sample_index(&mut rng)];
                max_wealth = max_wealth.max(m);
            }
            Ok(PathRecord {
                path,
                max_wealth,
                terminal: m,
            })
        })
        .collect::<Result<_>>()?;
    let n = n_paths as f64;
    let ceiling = 1.0 / alpha;
    let crossings = paths.iter().filter(|p| p.max_wealth >= ceiling).count() as f64;
    let crossing_frequency = crossings / n;
    let crossing_se = (alpha * (1.0 - alpha) / n).sqrt();
    let mut terminal: Vec<f64> = paths.iter().map(|p| p.terminal).collect();
    terminal.sort_by(f64::total_cmp);
    let quantile = |level: f64| terminal[((level * (n - 1.0)).round() as usize).min(n_paths - 1)];
    let logs: Vec<f64> = paths.iter().map(|p| p.terminal.ln()).collect();
    let mean = logs.iter().sum::<f64>() / n;
    let var = if mean.is_finite() {
        logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        f64::NAN
    };
    let summary = SimulationSummary {
        n_paths,
        horizon,
        under,
        crossing_frequency,
        crossing_se,
        crossing_within_bound: crossing_frequency <= alpha + 3.0 * crossing_se,
        max_wealth: paths.iter().map(|p| p.max_wealth).fold(0.0, f64::max),
        terminal_quantiles: [0.05, 0.25, 0.5, 0.75, 0.95].iter().map(|&l| quantile(l)).collect(),
        mean_log_growth: mean,
        log_growth_se: (var / n).sqrt(),
    };
    Ok((summary, paths))
}

/// Largest horizon for [`path_product_test`].
pub const MAX_PRODUCT_HORIZON: usize = 4;

/// The terminal wealth over `T` steps as one test on the product space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathProduct {
    /// Product null law over `T` steps.
    pub null: FiniteDistribution,
    /// `M_T` as a test; level `alpha` when bounded by `1/alpha`, else level 0.
    pub test: ContinuousTest,
}

/// Builds `M_T` on every outcome sequence of length `T` together with the
/// product null, for exact validity checks.
pub fn path_product_test(stream: &StreamModel, strategy: &dyn StepStrategy, alpha: f64, horizon: usize) -> Result<PathProduct> {
    if horizon == 0 || horizon > MAX_PRODUCT_HORIZON {
        return Err(EtestError::TooLarge(format!(
            "product horizon must be in 1..={MAX_PRODUCT_HORIZON}, got {horizon}"
        )));
    }
    let k = stream.len();
    let total = k.pow(horizon as u32);
    let mut labels = Vec::with_capacity(total);
    let mut probs = Vec::with_capacity(total);
    let mut values = Vec::with_capacity(total);
    for code in 0..total {
        let mut seq = Vec::with_capacity(horizon);
        let mut rest = code;
        for _ in 0..horizon {
            seq.push(rest % k);
            rest /= k;
        }
        seq.reverse();
        let mut m: f64 = 1.0;
        let mut prob = 1.0;
        for &o in &seq {
            prob *= stream.null.probs()[o];
            if m > 0.0 {
                m *= strategy.factors(stream, m, alpha)?[o];
            }
        }
        let names: Vec<&str> = seq.iter().map(|&o| stream.null.outcomes()[o].as_str()).collect();
        labels.push(format!("({})", names.join(",")));
        probs.push(prob);
        values.push(m);
    }
    let null = FiniteDistribution::new(labels.clone(), probs)?;
    let level = if values.iter().all(|v| *v <= 1.0 / alpha) {
        Level::new(alpha)?
    } else {
        Level::new(0.0)?
    };
    Ok(PathProduct {
        null,
        test: ContinuousTest::tabulated(level, labels, values)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::check_validity_exact;

    fn d(p: &[f64]) -> FiniteDistribution {
        FiniteDistribution::from_probs(p).unwrap()
    }

    fn coin() -> StreamModel {
        StreamModel::new(d(&[0.5, 0.5]), d(&[0.9, 0.1])).unwrap()
    }

    #[test]
    fn update_examples() {
        let s = EProcessState::new(Level::new(0.1).unwrap());
        assert_eq!(s.wealth(), 1.0);
        let s = s.update(2.5).unwrap().update(1.6).unwrap();
        assert_eq!(s.wealth(), 4.0);
        let z = EProcessState::new(Level::new(0.1).unwrap()).update(0.0).unwrap();
        assert_eq!(z.wealth(), 0.0);
        assert_eq!(z.update(5.0).unwrap().wealth(), 0.0);
        let mut s = EProcessState::new(Level::new(0.1).unwrap());
        for f in [1.8, 1.8, 0.2] {
            s = s.update(f).unwrap();
        }
        assert!((s.wealth() - 0.648).abs() < 1e-12);
        let prod: f64 = s.history().iter().map(|r| r.factor).product();
        assert!((prod - s.wealth()).abs() <= 1e-12 * s.wealth());
        assert!(s.update(-1.0).is_err());
    }

    #[test]
    fn fischer_examples() {
        let stream = coin();
        let u = Utility::log();
        let lvl = Level::new(0.1).unwrap();
        let s0 = EProcessState::new(lvl);
        let step = fischer_step(&s0, &stream, &u).unwrap();
        assert!((step.alpha_t - 0.1).abs() < 1e-15);
        assert!(step.factors.iter().all(|f| *f <= 10.0));

        let s6 = s0.update(6.0).unwrap();
        let step = fischer_step(&s6, &stream, &u).unwrap();
        assert!((step.alpha_t - 0.6).abs() < 1e-12);
        assert!(step.factors.iter().all(|f| 6.0 * f <= 10.0));
        assert!(step.factors.iter().all(|f| *f <= 1.0 / 0.6 + 1e-12));

        let s10 = s0.update(10.0).unwrap();
        let step = fischer_step(&s10, &stream, &u).unwrap();
        assert_eq!(step.alpha_t, 1.0);
        assert_eq!(step.factors, vec![1.0, 1.0]);

        let dead = s0.update(0.0).unwrap();
        assert!(matches!(fischer_step(&dead, &stream, &u), Err(EtestError::Absorbed)));
    }

    #[test]
    fn stopping_audit_examples() {
        let fair = StreamModel::new(d(&[0.5, 0.5]), d(&[0.5, 0.5])).unwrap();
        let mart = FixedFactors { factors: vec![1.5, 0.5] };
        let a = optional_stopping_audit(&fair, &mart, 0.1, 3).unwrap();
        assert!((a.max_expected_wealth - 1.0).abs() < 1e-12);
        let sup = FixedFactors { factors: vec![1.2, 0.5] };
        let a = optional_stopping_audit(&fair, &sup, 0.1, 3).unwrap();
        assert!(a.max_expected_wealth < 1.0);
        assert!((a.max_expected_wealth - 0.85).abs() < 1e-12);
        let one = FixedFactors { factors: vec![1.0, 1.0] };
        assert_eq!(optional_stopping_audit(&fair, &one, 0.1, 8).unwrap().max_expected_wealth, 1.0);
        assert!(optional_stopping_audit(&fair, &one, 0.1, 9).is_err());
    }

    #[test]
    fn fischer_audit_and_product_validity() {
        let stream = coin();
        let a = optional_stopping_audit(&stream, &Fischer::log(), 0.1, 6).unwrap();
        assert!(a.valid, "{a:?}");
        for t in 1..=4 {
            let pp = path_product_test(&stream, &Fischer::log(), 0.1, t).unwrap();
            assert_eq!(pp.test.level().alpha(), 0.1);
            let r = check_validity_exact(&pp.test, std::slice::from_ref(&pp.null)).unwrap();
            assert!(r.valid && r.max_expectation <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn simulation_is_bounded_and_deterministic() {
        let stream = coin();
        let (s1, p1) = simulate(&stream, &Fischer::log(), 0.1, 2000, 10, Under::Null, 5).unwrap();
        let (s2, p2) = simulate(&stream, &Fischer::log(), 0.1, 2000, 10, Under::Null, 5).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(p1, p2);
        assert!(s1.max_wealth <= 10.0);
        assert!(s1.crossing_within_bound);
    }

    proptest::proptest! {
        #[test]
        fn fischer_steps_never_overshoot_the_ceiling(wealth in 1e-3f64..10.0, alpha in 0.01f64..0.5) {
            let stream = StreamModel::new(d(&[0.5, 0.5]), d(&[0.7, 0.3])).unwrap();
            let wealth = wealth.min(1.0 / alpha);
            let (f, _) = fischer_factors(&stream, &Utility::log(), wealth, alpha).unwrap();
            for v in f {
                proptest::prop_assert!(wealth * v <= 1.0 / alpha);
            }
        }
    }

    #[test]
    fn degenerate_stream_has_no_growth() {
        let stream = StreamModel::new(d(&[0.3, 0.7]), d(&[0.3, 0.7])).unwrap();
        let (s, _) = simulate(&stream, &LikelihoodRatio, 0.1, 1000, 20, Under::Alternative, 1).unwrap();
        assert_eq!(s.mean_log_growth, 0.0);
    }
}
