//! Fit, selection and per-target inference for a [`RunConfig`].

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use selboost::baselearner::{BaseLearner, LearnerKind};
use selboost::boosting::{boost_fit, estimate_sigma, BoostConfig, BoostFit};
use selboost::linalg;
use selboost::polyhedron::{
    polyhedron_ci, polyhedron_pvalue, truncation_limits_streaming, Alternative, PathCertificate,
};
use selboost::sampler::{
    selective_inference, smooth_function_test_basis, smooth_pointwise_vector, test_vector_linear, InferenceResult,
    SamplerConfig, SelectionOracle, TestSpec,
};
use selboost::sim::derive_seed;
use selboost::stopping::{assign_folds, CvPlan, Selector, Stopping};

use crate::config::{InferenceMethod, RunConfig, StoppingConfig, TargetConfig, TestConfig, TestKind};
use crate::error::{CliError, Result};
use crate::ingest::{ingest, Ingested, Table};
use crate::report::{Real, Report, SelectedLearner, Status, TargetReport, TestDiagnostics, TestResult, Timing};

pub struct RunOptions {
    /// Skip inference and report the fit only.
    pub fit_only: bool,
    pub timing: bool,
}

/// Load the data named in `cfg` (relative paths resolve against `base_dir`)
/// and run the pipeline.
pub fn run_from_config(cfg: &RunConfig, base_dir: &Path, opts: &RunOptions) -> Result<Report> {
    let path = base_dir.join(&cfg.data);
    let table = Table::read(&path)?;
    run(cfg, &table, opts)
}

pub fn run(cfg: &RunConfig, table: &Table, opts: &RunOptions) -> Result<Report> {
    let start = Instant::now();
    cfg.validate()?;
    let data = ingest(table, cfg)?;
    let learners = &data.learners;
    let n = data.y.len();
    let stopping = match cfg.stopping {
        StoppingConfig::Fixed { m_stop } => Stopping::Fixed(m_stop),
        StoppingConfig::Cv { folds, grid_max, seed } => {
            Stopping::Cv { plan: CvPlan::new(learners, assign_folds(n, folds, seed)?)?, grid_max }
        }
    };
    let selector = Selector::new(learners, cfg.step_length, stopping)?;
    let (selected, m_stop) = selector.select(&data.y)?;
    let fit = boost_fit(&data.y, learners, &BoostConfig::new(cfg.step_length, m_stop)?)?;
    let sigma2 = estimate_sigma(&fit, &data.y, learners, cfg.variance.mode())?;
    let selection_seconds = start.elapsed().as_secs_f64();

    let ctx = Context::new(cfg, &data, &fit, selected, sigma2, selector);
    let targets = if opts.fit_only { Vec::new() } else { ctx.run_targets() };
    let total = start.elapsed().as_secs_f64();

    Ok(Report {
        format_version: crate::report::FORMAT_VERSION,
        config: cfg.clone(),
        n,
        m_stop,
        sigma2: Real(sigma2),
        centering: data.centering.clone(),
        learners: learners.iter().map(|l| l.name().to_string()).collect(),
        selected: ctx
            .selected
            .iter()
            .map(|&j| SelectedLearner {
                name: learners[j].name().to_string(),
                kind: kind_name(learners[j].kind()).to_string(),
                coefficients: fit.coefficients[&j].iter().map(|&v| Real(v)).collect(),
            })
            .collect(),
        targets,
        timing: opts.timing.then_some(Timing {
            total_seconds: total,
            selection_seconds,
            inference_seconds: total - selection_seconds,
        }),
    })
}

fn kind_name(k: LearnerKind) -> &'static str {
    match k {
        LearnerKind::Linear => "linear",
        LearnerKind::Group => "group",
        LearnerKind::Spline => "spline",
    }
}

fn test_name(t: TestKind) -> &'static str {
    match t {
        TestKind::Coefficient => "coefficient",
        TestKind::Function => "function",
        TestKind::Pointwise => "pointwise",
    }
}

struct Context<'a> {
    cfg: &'a RunConfig,
    data: &'a Ingested,
    fit: &'a BoostFit,
    selected: BTreeSet<usize>,
    sigma2: f64,
    selector: Selector<'a>,
    /// Stacked design of the selected learners, in index order.
    xa: DMatrix<f64>,
    blocks: Vec<(usize, Range<usize>)>,
}

impl<'a> Context<'a> {
    fn new(
        cfg: &'a RunConfig,
        data: &'a Ingested,
        fit: &'a BoostFit,
        selected: BTreeSet<usize>,
        sigma2: f64,
        selector: Selector<'a>,
    ) -> Self {
        let mut blocks = Vec::new();
        let mut at = 0;
        for &j in &selected {
            let p = data.learners[j].p();
            blocks.push((j, at..at + p));
            at += p;
        }
        let designs: Vec<&DMatrix<f64>> = selected.iter().map(|&j| data.learners[j].design()).collect();
        let xa = linalg::hstack(&designs);
        Self { cfg, data, fit, selected, sigma2, selector, xa, blocks }
    }

    fn learner_index(&self, name: &str) -> Option<usize> {
        self.data.learners.iter().position(|l| l.name() == name)
    }

    fn block(&self, j: usize) -> Range<usize> {
        self.blocks.iter().find(|(k, _)| *k == j).map(|(_, r)| r.clone()).expect("selected learner has a block")
    }

    fn default_targets(&self) -> Vec<TargetConfig> {
        self.selected
            .iter()
            .map(|&j| {
                let l = &self.data.learners[j];
                let test = if l.kind() == LearnerKind::Linear && l.p() == 1 {
                    TestKind::Coefficient
                } else {
                    TestKind::Function
                };
                TargetConfig::new(l.name(), test)
            })
            .collect()
    }

    fn run_targets(&self) -> Vec<TargetReport> {
        let targets = if self.cfg.targets.is_empty() { self.default_targets() } else { self.cfg.targets.clone() };
        targets.iter().enumerate().map(|(i, t)| self.run_target(i as u64, t)).collect()
    }

    fn method_name(&self) -> &'static str {
        match self.cfg.inference.method {
            InferenceMethod::Sampling => "sampling",
            InferenceMethod::Polyhedron => "polyhedron",
        }
    }

    fn run_target(&self, index: u64, t: &TargetConfig) -> TargetReport {
        let test = test_name(t.test);
        let method = self.method_name();
        let Some(j) = self.learner_index(&t.learner) else {
            return TargetReport::failed(&t.learner, test, method, Status::Error, "unknown learner".into());
        };
        if !self.selected.contains(&j) {
            return TargetReport::failed(
                &t.learner,
                test,
                method,
                Status::NotSelected,
                "learner was not selected; no selective test is defined".into(),
            );
        }
        match self.target_results(index, j, &t.spec()) {
            Ok(results) => TargetReport {
                learner: t.learner.clone(),
                test: test.to_string(),
                method: method.to_string(),
                status: Status::Ok,
                reason: None,
                results,
            },
            Err(e) => TargetReport::failed(&t.learner, test, method, Status::Error, e.to_string()),
        }
    }

    fn target_results(&self, index: u64, j: usize, test: &TestConfig) -> Result<Vec<TestResult>> {
        let learner = &self.data.learners[j];
        let block = self.block(j);
        let coef = &self.fit.coefficients[&j];
        match test {
            TestConfig::Coefficient => {
                if learner.p() != 1 {
                    return Err(CliError::Config(format!(
                        "coefficient test needs a one-column learner, '{}' has {} columns",
                        learner.name(),
                        learner.p()
                    )));
                }
                let v = test_vector_linear(&self.xa, block.start)?;
                Ok(vec![self.direction_test(v, None, Some(coef[0]), derive_seed(self.cfg.inference.seed, index, 0))?])
            }
            TestConfig::Pointwise { grid } => grid
                .iter()
                .enumerate()
                .map(|(g, &c)| {
                    let row = design_row(learner, c, &self.data.linear_means)?;
                    let v = smooth_pointwise_vector(&self.xa, block.clone(), &row)?;
                    let seed = derive_seed(self.cfg.inference.seed, index, g as u64);
                    self.direction_test(v, Some(c), Some(row.dot(coef)), seed)
                })
                .collect(),
            TestConfig::Function => {
                if self.cfg.inference.method == InferenceMethod::Polyhedron {
                    return Err(CliError::Config(
                        "whole-function tests are only available with method = \"sampling\"".into(),
                    ));
                }
                let w = smooth_function_test_basis(&self.xa, block)?;
                let spec = TestSpec::group(&w, 0.0, self.sigma2)?;
                let r = self.sample(&spec, derive_seed(self.cfg.inference.seed, index, 0))?;
                Ok(vec![sampled_result(&r, None, Some(coef.norm()))])
            }
        }
    }

    fn sample(&self, spec: &TestSpec, seed: u64) -> Result<InferenceResult> {
        let inf = &self.cfg.inference;
        let cfg = SamplerConfig {
            draws: inf.draws,
            proposal: inf.proposal,
            alpha: inf.alpha,
            seed,
            ..SamplerConfig::default()
        };
        let oracle = SelectionOracle::new(self.selector.clone(), self.selected.clone());
        Ok(selective_inference(&oracle, &self.data.y, spec, &cfg)?)
    }

    fn direction_test(&self, v: DVector<f64>, c: Option<f64>, boosted: Option<f64>, seed: u64) -> Result<TestResult> {
        match self.cfg.inference.method {
            InferenceMethod::Sampling => {
                let spec = TestSpec::direction(v, 0.0, self.sigma2)?;
                let r = self.sample(&spec, seed)?;
                Ok(sampled_result(&r, c, boosted))
            }
            InferenceMethod::Polyhedron => self.polyhedron_test(&v, c, boosted),
        }
    }

    fn polyhedron_test(&self, v: &DVector<f64>, c: Option<f64>, boosted: Option<f64>) -> Result<TestResult> {
        if !matches!(self.cfg.stopping, StoppingConfig::Fixed { .. }) {
            return Err(CliError::Config("the polyhedron method needs fixed stopping".into()));
        }
        let cert = PathCertificate::from_fit(self.fit, self.cfg.step_length, &self.data.learners)?;
        let y = &self.data.y;
        let interval = truncation_limits_streaming(&cert, v, y)?;
        let p = polyhedron_pvalue(interval, v, self.sigma2, y, 0.0, Alternative::TwoSided)?;
        let (lo, hi) = polyhedron_ci(interval, v, self.sigma2, y, self.cfg.inference.alpha)?;
        Ok(TestResult {
            c: c.map(Real),
            estimate: Real(v.dot(y)),
            boosted: boosted.map(Real),
            p_value: Real(p),
            ci_lo: Some(Real(lo)),
            ci_hi: Some(Real(hi)),
            diagnostics: TestDiagnostics {
                ess: None,
                accepted: None,
                draws: None,
                refits: None,
                bracket: None,
                bracket_unbounded: None,
                truncation: Some([Real(interval.lo), Real(interval.up)]),
                low_accuracy: false,
                infinite_ci: !(lo.is_finite() && hi.is_finite()),
            },
        })
    }
}

/// Design row of a learner at covariate value `c`, on the centered scale
/// used in the fit.
fn design_row(learner: &BaseLearner, c: f64, means: &std::collections::BTreeMap<String, f64>) -> Result<DVector<f64>> {
    if let Some(term) = learner.spline_term() {
        return Ok(term.eval_row(c)?);
    }
    if learner.kind() == LearnerKind::Linear && learner.p() == 1 {
        let mean = means.get(learner.name()).copied().unwrap_or(0.0);
        return Ok(DVector::from_element(1, c - mean));
    }
    Err(CliError::Config(format!(
        "pointwise tests need a spline or one-column linear learner, '{}' is neither",
        learner.name()
    )))
}

fn sampled_result(r: &InferenceResult, c: Option<f64>, boosted: Option<f64>) -> TestResult {
    let d = &r.diagnostics;
    TestResult {
        c: c.map(Real),
        estimate: Real(r.estimate),
        boosted: boosted.map(Real),
        p_value: Real(r.p_value),
        ci_lo: Some(Real(r.ci_lo)),
        ci_hi: Some(Real(r.ci_hi)),
        diagnostics: TestDiagnostics {
            ess: Some(Real(r.ess)),
            accepted: Some(r.accepted),
            draws: Some(r.draws),
            refits: Some(d.refits),
            bracket: d.bracket.map(|b| [Real(b.lo), Real(b.up)]),
            bracket_unbounded: d.bracket.map(|b| [b.unbounded_lo, b.unbounded_up]),
            truncation: None,
            low_accuracy: d.low_accuracy,
            infinite_ci: d.infinite_ci,
        },
    }
}
