//! Problem documents read by the subcommands.
//!
//! Every document is a JSON object. A `"command"` field naming the payload
//! is optional when the document is fed to its own subcommand and required
//! when it is parsed as a bare [`ProblemSpec`].

use etest_core::bridge::PValueFamily;
use etest_core::sequential::{Fischer, FixedFactors, LikelihoodRatio, StepStrategy, StreamModel, Under};
use etest_core::{ContinuousTest, FiniteDistribution, GaussianLocation, Result, UtilitySpec};
use serde::{Deserialize, Serialize};

/// A distribution given either with labels or as a bare probability vector
/// (labels `a`, `b`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistInput {
    /// `{"outcomes": [...], "probs": [...]}`.
    Labelled(FiniteDistribution),
    /// `[0.5, 0.5]`.
    Probs(Vec<f64>),
}

impl DistInput {
    /// Validates and builds the distribution.
    pub fn build(&self) -> Result<FiniteDistribution> {
        match self {
            DistInput::Labelled(d) => Ok(d.clone()),
            DistInput::Probs(p) => FiniteDistribution::from_probs(p),
        }
    }
}

/// A null law for Monte Carlo audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NullInput {
    /// `{"mu": 0, "sigma": 1}`.
    Gaussian(GaussianLocation),
    /// A finite distribution.
    Finite(DistInput),
}

/// One number or a list of numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    /// A scalar.
    One(f64),
    /// A list.
    Many(Vec<f64>),
}

impl OneOrMany {
    /// The values as a list.
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![*x],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

fn log_utility() -> UtilitySpec {
    UtilitySpec::Log
}

/// Payload of `solve-simple`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimpleSpec {
    /// Null.
    pub p: DistInput,
    /// Alternative.
    pub q: DistInput,
    /// Level.
    pub alpha: f64,
    /// Utility; log when omitted.
    #[serde(default = "log_utility")]
    pub utility: UtilitySpec,
}

/// Payload of `solve-composite`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeSpec {
    /// Null members.
    #[serde(rename = "H")]
    pub nulls: Vec<DistInput>,
    /// Alternative.
    pub q: DistInput,
    /// Level.
    pub alpha: f64,
    /// Utility; log when omitted.
    #[serde(default = "log_utility")]
    pub utility: UtilitySpec,
    /// Iteration budget of each solver run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

/// Payload of `gaussian-figure`. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FigureSpec {
    /// Alternative mean.
    pub mu: f64,
    /// Standard deviation.
    pub sigma: f64,
    /// One level per figure.
    pub alpha: OneOrMany,
    /// Exponents; when omitted, `-2, -1, 0, 0.5, 0.9` plus `1` at positive levels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_list: Option<Vec<f64>>,
    /// Left end of the grid.
    pub x_min: f64,
    /// Right end of the grid.
    pub x_max: f64,
    /// Grid size.
    pub n_points: usize,
    /// Output directory, one CSV per level.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_path: Option<String>,
}

impl Default for FigureSpec {
    fn default() -> Self {
        Self {
            mu: 1.0,
            sigma: 1.0,
            alpha: OneOrMany::Many(vec![0.0, 0.05]),
            h_list: None,
            x_min: 0.0,
            x_max: 10.0,
            n_points: 501,
            out_path: None,
        }
    }
}

impl FigureSpec {
    /// The exponents drawn at level `alpha`.
    pub fn h_values(&self, alpha: f64) -> Vec<f64> {
        match &self.h_list {
            Some(h) => h.clone(),
            None => {
                let mut h = vec![-2.0, -1.0, 0.0, 0.5, 0.9];
                if alpha > 0.0 {
                    h.push(1.0);
                }
                h
            }
        }
    }
}

/// Step rule of a sequential simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategySpec {
    /// Capped optimal steps for a utility.
    Fischer {
        /// Step utility; log when omitted.
        #[serde(default = "log_utility")]
        utility: UtilitySpec,
    },
    /// Uncapped likelihood-ratio steps.
    LikelihoodRatio,
    /// The same factors at every step.
    Fixed {
        /// Factor per outcome.
        factors: Vec<f64>,
    },
}

impl Default for StrategySpec {
    fn default() -> Self {
        StrategySpec::Fischer { utility: UtilitySpec::Log }
    }
}

impl StrategySpec {
    /// Builds the strategy.
    pub fn build(&self) -> Result<Box<dyn StepStrategy>> {
        Ok(match self {
            StrategySpec::Fischer { utility } => Box::new(Fischer {
                utility: utility.build()?,
            }),
            StrategySpec::LikelihoodRatio => Box::new(LikelihoodRatio),
            StrategySpec::Fixed { factors } => Box::new(FixedFactors {
                factors: factors.clone(),
            }),
        })
    }
}

fn default_paths() -> usize {
    10_000
}

fn default_under() -> Under {
    Under::Null
}

/// Payload of `sequential-sim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequentialSpec {
    /// Null step law.
    pub null: DistInput,
    /// Alternative step law.
    pub alt: DistInput,
    /// Target level.
    pub alpha: f64,
    /// Step rule; log-utility Fischer steps when omitted.
    #[serde(default)]
    pub strategy: StrategySpec,
    /// Number of paths.
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    /// Steps per path.
    pub horizon: usize,
    /// Which law generates the data.
    #[serde(default = "default_under")]
    pub under: Under,
    /// Optional CSV of per-path results (`path,max_wealth,terminal`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths_out: Option<String>,
}

impl SequentialSpec {
    /// Builds the stream model.
    pub fn stream(&self) -> Result<StreamModel> {
        StreamModel::new(self.null.build()?, self.alt.build()?)
    }
}

/// Payload of `convert`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvertSpec {
    /// Level-0 evidence, one value or several.
    pub e: OneOrMany,
    /// Target level.
    pub alpha: f64,
}

/// Payload of `audit`, selected by `"kind"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditSpec {
    /// Exact `sup_P E_P[test]` of a tabulated test.
    Validity {
        /// The test.
        test: ContinuousTest,
        /// Null members.
        nulls: Vec<DistInput>,
    },
    /// Monte Carlo `E[test]` under a null sampler. Needs `--seed`.
    McValidity {
        /// The test.
        test: ContinuousTest,
        /// Null law.
        null: NullInput,
        /// Draws.
        n: usize,
    },
    /// Data-dependent level reading of a test. Needs `--seed`.
    CrossLevel {
        /// The test; its level must be positive.
        test: ContinuousTest,
        /// Null law.
        null: NullInput,
        /// Draws.
        n: usize,
    },
    /// Worst stopping time of a sequential strategy.
    Stopping {
        /// Null step law.
        null: DistInput,
        /// Alternative step law.
        alt: DistInput,
        /// Step rule.
        #[serde(default)]
        strategy: StrategySpec,
        /// Target level.
        alpha: f64,
        /// Horizon.
        horizon: usize,
    },
    /// p-value of a family of binary tests.
    Family {
        /// The family.
        family: PValueFamily,
    },
    /// The deterministic Markov chain at `(x, alpha)`.
    Markov {
        /// Evidence value.
        x: f64,
        /// Level.
        alpha: f64,
    },
}

/// Any problem document, tagged by `"command"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum ProblemSpec {
    /// `solve-simple`.
    Simple(SimpleSpec),
    /// `solve-composite`.
    Composite(CompositeSpec),
    /// `gaussian-figure`.
    Gaussian(FigureSpec),
    /// `sequential-sim`.
    Sequential(SequentialSpec),
    /// `convert`.
    Convert(ConvertSpec),
    /// `audit`.
    Audit(AuditSpec),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_vectors_and_labelled_distributions_parse() {
        let a: DistInput = serde_json::from_str("[0.5, 0.5]").unwrap();
        let b: DistInput = serde_json::from_str(r#"{"outcomes": ["a", "b"], "probs": [0.5, 0.5]}"#).unwrap();
        assert_eq!(a.build().unwrap(), b.build().unwrap());
        assert!(serde_json::from_str::<DistInput>("[0.5, 0.6]").unwrap().build().is_err());
    }

    #[test]
    fn missing_q_is_a_schema_error() {
        let err = serde_json::from_str::<SimpleSpec>(r#"{"p": [0.5, 0.5], "alpha": 0}"#).unwrap_err();
        assert!(err.to_string().contains("missing field `q`"));
    }

    #[test]
    fn figure_defaults_add_the_step_at_positive_levels() {
        let f = FigureSpec::default();
        assert_eq!(f.h_values(0.0), vec![-2.0, -1.0, 0.0, 0.5, 0.9]);
        assert_eq!(f.h_values(0.05).last(), Some(&1.0));
        let parsed: FigureSpec = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, f);
    }

    #[test]
    fn problem_specs_round_trip() {
        let doc = r#"{"command": "audit", "kind": "markov", "x": 25, "alpha": 0.05}"#;
        let spec: ProblemSpec = serde_json::from_str(doc).unwrap();
        let again: ProblemSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, again);
    }
}
