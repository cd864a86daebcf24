//! Declarative run configuration (TOML).
//!
//! ```toml
//! data = "prices.csv"
//! response = "price"
//! step_length = 0.1
//!
//! [stopping]
//! kind = "cv"
//! folds = 5
//! grid_max = 300
//! seed = 7
//!
//! [variance]
//! mode = "ols_refit"
//!
//! [inference]
//! method = "sampling"
//! draws = 1000
//! alpha = 0.05
//! seed = 11
//!
//! [[learner]]
//! type = "spline"
//! column = "area"
//! knots = 7
//! split_linear = true
//!
//! [[target]]
//! learner = "area"
//! test = "coefficient"
//! ```

use std::path::Path;

use selboost::boosting::VarianceMode;
use selboost::sampler::Proposal;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Suffix of the deviation learner created by `split_linear`.
pub const DEVIATION_SUFFIX: &str = ":dev";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: String,
    pub response: String,
    #[serde(default = "default_nu")]
    pub step_length: f64,
    pub stopping: StoppingConfig,
    #[serde(default)]
    pub variance: VarianceConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(rename = "learner", default)]
    pub learners: Vec<LearnerConfig>,
    #[serde(rename = "target", default)]
    pub targets: Vec<TargetConfig>,
}

fn default_nu() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StoppingConfig {
    Fixed {
        m_stop: usize,
    },
    Cv {
        #[serde(default = "default_folds")]
        folds: usize,
        grid_max: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
}

fn default_folds() -> usize {
    5
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum VarianceConfig {
    Known {
        value: f64,
    },
    BoostResidual,
    Response,
    #[default]
    OlsRefit,
}

impl VarianceConfig {
    pub fn mode(&self) -> VarianceMode {
        match *self {
            VarianceConfig::Known { value } => VarianceMode::Known(value),
            VarianceConfig::BoostResidual => VarianceMode::BoostResidual,
            VarianceConfig::Response => VarianceMode::Response,
            VarianceConfig::OlsRefit => VarianceMode::OlsRefit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    Sampling,
    Polyhedron,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    #[serde(default = "default_method")]
    pub method: InferenceMethod,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_proposal")]
    pub proposal: Proposal,
}

fn default_method() -> InferenceMethod {
    InferenceMethod::Sampling
}

fn default_draws() -> usize {
    1000
}

fn default_alpha() -> f64 {
    0.05
}

fn default_proposal() -> Proposal {
    Proposal::UniformBracket
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            method: default_method(),
            draws: default_draws(),
            alpha: default_alpha(),
            seed: default_seed(),
            proposal: default_proposal(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerConfig {
    Linear {
        column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Spline {
        column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        #[serde(default = "default_degree")]
        degree: usize,
        #[serde(default = "default_knots")]
        knots: usize,
        #[serde(default = "default_diff_order")]
        diff_order: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        df: Option<f64>,
        /// Fit a linear learner plus a spline deviation from linearity.
        #[serde(default)]
        split_linear: bool,
    },
    Group {
        columns: Vec<String>,
        name: String,
    },
    /// Categorical column expanded into centered dummies (first level is
    /// the reference).
    Factor {
        column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
}

fn default_degree() -> usize {
    3
}

fn default_knots() -> usize {
    20
}

fn default_diff_order() -> usize {
    2
}

impl LearnerConfig {
    /// Name of the (first) learner this declaration creates.
    pub fn name(&self) -> String {
        match self {
            LearnerConfig::Linear { column, name }
            | LearnerConfig::Spline { column, name, .. }
            | LearnerConfig::Factor { column, name } => name.clone().unwrap_or_else(|| column.clone()),
            LearnerConfig::Group { name, .. } => name.clone(),
        }
    }

    pub fn columns(&self) -> Vec<String> {
        match self {
            LearnerConfig::Linear { column, .. }
            | LearnerConfig::Spline { column, .. }
            | LearnerConfig::Factor { column, .. } => vec![column.clone()],
            LearnerConfig::Group { columns, .. } => columns.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Least-squares coefficient of a one-column learner.
    Coefficient,
    /// Whole learner (group, factor or smooth term) tested at once.
    Function,
    /// Value of a smooth or linear term at each grid point.
    Pointwise,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TestConfig {
    Coefficient,
    Function,
    Pointwise { grid: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub learner: String,
    pub test: TestKind,
    /// Covariate values, pointwise tests only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
}

impl TargetConfig {
    pub fn new(learner: impl Into<String>, test: TestKind) -> Self {
        Self { learner: learner.into(), test, grid: None }
    }

    pub fn spec(&self) -> TestConfig {
        match self.test {
            TestKind::Coefficient => TestConfig::Coefficient,
            TestKind::Function => TestConfig::Function,
            TestKind::Pointwise => TestConfig::Pointwise { grid: self.grid.clone().unwrap_or_default() },
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.step_length > 0.0 && self.step_length <= 1.0) {
            return bad(format!("step_length {} not in (0, 1]", self.step_length));
        }
        if self.learners.is_empty() {
            return bad("at least one [[learner]] is required".into());
        }
        match self.stopping {
            StoppingConfig::Fixed { m_stop } if m_stop < 1 => return bad("m_stop must be >= 1".into()),
            StoppingConfig::Cv { folds, grid_max, .. } if folds < 2 || grid_max < 1 => {
                return bad("cv needs folds >= 2 and grid_max >= 1".into())
            }
            _ => {}
        }
        if let VarianceConfig::Known { value } = self.variance {
            if !(value > 0.0 && value.is_finite()) {
                return bad("known variance must be positive".into());
            }
        }
        let inf = &self.inference;
        if inf.method == InferenceMethod::Sampling && inf.draws < 100 {
            return bad(format!("sampling needs draws >= 100, got {}", inf.draws));
        }
        if !(inf.alpha > 0.0 && inf.alpha < 1.0) {
            return bad(format!("alpha {} not in (0, 1)", inf.alpha));
        }
        let mut names = std::collections::BTreeSet::new();
        for l in &self.learners {
            for n in self.expanded_names(l) {
                if !names.insert(n.clone()) {
                    return bad(format!("duplicate learner name '{n}'"));
                }
            }
            if l.columns().iter().any(|c| c == &self.response) {
                return bad(format!("learner '{}' uses the response column", l.name()));
            }
            match l {
                LearnerConfig::Spline { lambda, df, .. } => {
                    if lambda.is_some() && df.is_some() {
                        return bad(format!("learner '{}': give lambda or df, not both", l.name()));
                    }
                }
                LearnerConfig::Group { columns, .. } if columns.is_empty() => {
                    return bad(format!("group '{}' has no columns", l.name()));
                }
                _ => {}
            }
        }
        for t in &self.targets {
            if !names.contains(&t.learner) {
                return bad(format!("target refers to unknown learner '{}'", t.learner));
            }
            match (&t.test, &t.grid) {
                (TestKind::Pointwise, Some(grid)) if !grid.is_empty() && grid.iter().all(|c| c.is_finite()) => {}
                (TestKind::Pointwise, _) => {
                    return bad(format!("target '{}': pointwise grid must be finite and non-empty", t.learner))
                }
                (_, Some(_)) => return bad(format!("target '{}': grid is only used by pointwise tests", t.learner)),
                _ => {}
            }
        }
        Ok(())
    }

    fn expanded_names(&self, l: &LearnerConfig) -> Vec<String> {
        match l {
            LearnerConfig::Spline { split_linear: true, .. } => {
                let n = l.name();
                vec![n.clone(), format!("{n}{DEVIATION_SUFFIX}")]
            }
            _ => vec![l.name()],
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
data = "d.csv"
response = "y"

[stopping]
kind = "fixed"
m_stop = 40

[[learner]]
type = "linear"
column = "x1"

[[learner]]
type = "spline"
column = "x2"
knots = 7
df = 4.0
split_linear = true

[[target]]
learner = "x2:dev"
test = "pointwise"
grid = [0.0, 0.5]
"#;

    #[test]
    fn parses_and_defaults() {
        let c = RunConfig::from_toml(BASIC).unwrap();
        assert_eq!(c.step_length, 0.1);
        assert_eq!(c.inference.draws, 1000);
        assert_eq!(c.variance, VarianceConfig::OlsRefit);
        assert_eq!(c.learners.len(), 2);
        assert_eq!(c.targets[0].spec(), TestConfig::Pointwise { grid: vec![0.0, 0.5] });
    }

    #[test]
    fn toml_roundtrip() {
        let c = RunConfig::from_toml(BASIC).unwrap();
        let again = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = BASIC.replace("m_stop = 40", "m_stop = 40\nmstop = 3");
        assert!(RunConfig::from_toml(&typo).is_err());
        let typo = BASIC.replace("knots = 7", "knot = 7");
        assert!(RunConfig::from_toml(&typo).is_err());
    }

    #[test]
    fn invariants_checked() {
        let few = BASIC
            .replace("[[learner]]\ntype = \"linear\"", "[inference]\ndraws = 50\n\n[[learner]]\ntype = \"linear\"");
        assert!(matches!(RunConfig::from_toml(&few), Err(CliError::Config(m)) if m.contains("draws")));
        let bad_target = BASIC.replace("learner = \"x2:dev\"", "learner = \"x9\"");
        assert!(RunConfig::from_toml(&bad_target).is_err());
        let stray = BASIC.replace("test = \"pointwise\"", "test = \"function\"");
        assert!(RunConfig::from_toml(&stray).is_err());
        let resp = BASIC.replace("column = \"x1\"", "column = \"y\"");
        assert!(RunConfig::from_toml(&resp).is_err());
    }
}
