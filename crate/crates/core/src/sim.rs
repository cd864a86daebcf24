//! Simulation designs and the study runner used to check calibration,
//! coverage and power.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::baselearner::{BaseLearner, Smoothing, SplineConfig};
use crate::boosting::{boost_fit, estimate_sigma, BoostConfig, VarianceMode};
use crate::error::{Error, Result};
use crate::linalg;
use crate::normal::{norm_cdf, norm_quantile};
use crate::polyhedron::{polyhedron_ci, polyhedron_pvalue, truncation_limits_streaming, Alternative, PathCertificate};
use crate::sampler::{
    selective_inference, smooth_function_test_basis, test_vector_linear, Proposal, SamplerConfig, SearchConfig,
    SelectionOracle, TestSpec,
};
use crate::stopping::{assign_folds, CvPlan, Selector, Stopping};

pub const DEFAULT_BETA: [f64; 4] = [4.0, -3.0, 2.0, -1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    /// `η = X[:, :k] β` with `p0` further pure-noise columns.
    Linear { n: usize, p0: usize, beta: Vec<f64> },
    /// `η = sin(2 x₁) + x₂² / 2` with `p0` noise covariates, all entering
    /// through P-spline learners.
    Additive { n: usize, p0: usize, spline: SplineConfig, df: f64 },
}

impl Design {
    pub fn n(&self) -> usize {
        match self {
            Design::Linear { n, .. } | Design::Additive { n, .. } => *n,
        }
    }

    pub fn num_covariates(&self) -> usize {
        match self {
            Design::Linear { p0, beta, .. } => beta.len() + p0,
            Design::Additive { p0, .. } => 2 + p0,
        }
    }

    pub fn signals(&self) -> Vec<usize> {
        match self {
            Design::Linear { beta, .. } => (0..beta.len()).filter(|&j| beta[j] != 0.0).collect(),
            Design::Additive { .. } => vec![0, 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoppingSpec {
    Fixed { m_stop: usize },
    Cv { folds: usize, grid_max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "mode", rename_all = "snake_case")]
pub enum StudyVariance {
    /// The generating error variance of each replication.
    True,
    Estimate(VarianceMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Methods {
    pub sampling: bool,
    pub polyhedron: bool,
    pub naive: bool,
}

impl Default for Methods {
    fn default() -> Self {
        Self { sampling: true, polyhedron: false, naive: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub design: Design,
    pub snr: f64,
    pub nu: f64,
    pub stopping: StoppingSpec,
    pub variance: StudyVariance,
    pub methods: Methods,
    pub replications: usize,
    pub draws: usize,
    pub proposal: Proposal,
    pub alpha: f64,
    pub base_seed: u64,
}

pub const PRESETS: [&str; 6] = [
    "linear-n25-p8-snr1",
    "linear-n25-p26-snr1",
    "linear-n25-p26-snr4",
    "linear-n100-p26-snr1",
    "linear-n100-p26-snr4",
    "additive-n300",
];

impl ScenarioConfig {
    pub fn linear(name: impl Into<String>, n: usize, p0: usize, snr: f64, m_stop: usize) -> Self {
        Self {
            name: name.into(),
            design: Design::Linear { n, p0, beta: DEFAULT_BETA.to_vec() },
            snr,
            nu: 0.1,
            stopping: StoppingSpec::Fixed { m_stop },
            variance: StudyVariance::True,
            methods: Methods::default(),
            replications: 200,
            draws: 600,
            proposal: Proposal::UniformBracket,
            alpha: 0.05,
            base_seed: 1,
        }
    }

    pub fn additive(n: usize) -> Self {
        Self {
            name: format!("additive-n{n}"),
            design: Design::Additive {
                n,
                p0: 13,
                spline: SplineConfig { degree: 3, num_interior_knots: 5, diff_order: 2 },
                df: 4.0,
            },
            snr: 0.5,
            nu: 0.1,
            stopping: StoppingSpec::Fixed { m_stop: 50 },
            variance: StudyVariance::True,
            methods: Methods::default(),
            replications: 100,
            draws: 600,
            proposal: Proposal::UniformBracket,
            alpha: 0.05,
            base_seed: 1,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let lin = |n: usize, p: usize, snr: f64| Self::linear(name, n, p - 4, snr, 40);
        Ok(match name {
            "linear-n25-p8-snr1" => lin(25, 8, 1.0),
            "linear-n25-p26-snr1" => lin(25, 26, 1.0),
            "linear-n25-p26-snr4" => lin(25, 26, 4.0),
            "linear-n100-p26-snr1" => lin(100, 26, 1.0),
            "linear-n100-p26-snr4" => lin(100, 26, 4.0),
            "additive-n300" => Self::additive(300),
            other => {
                return Err(Error::InvalidInput(format!("unknown preset '{other}'; available: {}", PRESETS.join(", "))))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Error::InvalidInput("SNR must be positive".into()));
        }
        if self.replications < 1 {
            return Err(Error::InvalidInput("need at least one replication".into()));
        }
        if self.draws < 1 {
            return Err(Error::InvalidInput("need at least one draw".into()));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::InvalidInput("step length must lie in (0, 1]".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput("alpha must lie in (0, 1)".into()));
        }
        if self.design.n() < 3 {
            return Err(Error::InvalidInput("need at least three observations".into()));
        }
        match self.stopping {
            StoppingSpec::Fixed { m_stop } if m_stop < 1 => Err(Error::InvalidInput("m_stop must be >= 1".into())),
            StoppingSpec::Cv { folds, grid_max } if folds < 2 || grid_max < 1 => {
                Err(Error::InvalidInput("CV needs >= 2 folds and grid_max >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep`, and of the `stream`-th purpose within it.
pub fn derive_seed(base: u64, rep: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(rep)) ^ stream)
}

#[derive(Debug, Clone)]
pub struct SimData {
    /// Centered response.
    pub y: DVector<f64>,
    /// Raw covariates (linear designs: centered columns).
    pub x: DMatrix<f64>,
    /// Centered true mean.
    pub mu: DVector<f64>,
    pub sigma: f64,
    pub signals: Vec<usize>,
}

fn sample_sd(v: &DVector<f64>) -> f64 {
    let m = linalg::mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn finish(eta: DVector<f64>, x: DMatrix<f64>, snr: f64, rng: &mut ChaCha8Rng, signals: Vec<usize>) -> SimData {
    let sigma = sample_sd(&eta) / snr;
    let n = eta.len();
    let y = DVector::from_fn(n, |i, _| eta[i] + sigma * rng.sample::<f64, _>(StandardNormal));
    let y = y.add_scalar(-linalg::mean(&y));
    let mu = eta.add_scalar(-linalg::mean(&eta));
    SimData { y, x, mu, sigma, signals }
}

pub fn gen_linear(n: usize, p0: usize, beta: &[f64], snr: f64, seed: u64) -> SimData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = beta.len() + p0;
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = linalg::center_columns(&x, &linalg::column_means(&x));
    let b = DVector::from_fn(p, |j, _| if j < beta.len() { beta[j] } else { 0.0 });
    let eta = &x * b;
    let signals = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
    finish(eta, x, snr, &mut rng, signals)
}

pub fn additive_signal(x1: f64, x2: f64) -> f64 {
    (2.0 * x1).sin() + 0.5 * x2 * x2
}

pub fn gen_additive(n: usize, p0: usize, snr: f64, seed: u64) -> SimData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, 2 + p0, |_, _| rng.sample::<f64, _>(StandardNormal));
    let eta = DVector::from_fn(n, |i, _| additive_signal(x[(i, 0)], x[(i, 1)]));
    finish(eta, x, snr, &mut rng, vec![0, 1])
}

pub fn generate(cfg: &ScenarioConfig, seed: u64) -> SimData {
    match &cfg.design {
        Design::Linear { n, p0, beta } => gen_linear(*n, *p0, beta, cfg.snr, seed),
        Design::Additive { n, p0, .. } => gen_additive(*n, *p0, cfg.snr, seed),
    }
}

/// Base-learners for a simulated data set: one linear learner per column,
/// or one P-spline learner per covariate.
pub fn build_learners(cfg: &ScenarioConfig, data: &SimData) -> Result<Vec<BaseLearner>> {
    (0..data.x.ncols())
        .map(|j| {
            let col: DVector<f64> = data.x.column(j).into();
            match &cfg.design {
                Design::Linear { .. } => BaseLearner::linear(j, format!("x{}", j + 1), &col),
                Design::Additive { spline, df, .. } => {
                    BaseLearner::spline(j, format!("x{}", j + 1), col.as_slice(), *spline, Smoothing::Df(*df), false)
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sampling,
    Polyhedron,
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Coefficient,
    Function,
}

/// One tested hypothesis under one method, or a failed replication
/// (`variable` empty, `error` set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub rep: usize,
    pub seed: u64,
    pub admissible: bool,
    pub m_stop: usize,
    /// Selected learner indices joined by `;`.
    pub selected: String,
    pub variable: Option<usize>,
    pub kind: Option<TestKind>,
    pub method: Option<Method>,
    pub is_signal: Option<bool>,
    pub null_holds: Option<bool>,
    /// `vᵀμ`, or `‖P_W μ‖` for function tests.
    pub true_value: Option<f64>,
    pub estimate: Option<f64>,
    pub p_value: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub ess: Option<f64>,
    pub accepted: Option<usize>,
    pub error: Option<String>,
}

impl Record {
    fn base(rep: usize, seed: u64) -> Self {
        Self {
            rep,
            seed,
            admissible: false,
            m_stop: 0,
            selected: String::new(),
            variable: None,
            kind: None,
            method: None,
            is_signal: None,
            null_holds: None,
            true_value: None,
            estimate: None,
            p_value: None,
            ci_lo: None,
            ci_hi: None,
            ess: None,
            accepted: None,
            error: None,
        }
    }

    pub fn covers(&self) -> Option<bool> {
        match (self.ci_lo, self.ci_hi, self.true_value) {
            (Some(lo), Some(hi), Some(t)) => Some(lo <= t && t <= hi),
            _ => None,
        }
    }
}

fn naive_direction(v: &DVector<f64>, y: &DVector<f64>, sigma2: f64, alpha: f64) -> (f64, f64, f64) {
    let est = v.dot(y);
    let sd = (sigma2 * v.norm_squared()).sqrt();
    let p = 2.0 * norm_cdf(-(est / sd).abs());
    let z = norm_quantile(1.0 - alpha / 2.0);
    (p, est - z * sd, est + z * sd)
}

fn naive_group(w: &DMatrix<f64>, y: &DVector<f64>, sigma2: f64) -> Result<f64> {
    let stat = (w.transpose() * y).norm_squared() / sigma2;
    let chi = ChiSquared::new(w.ncols() as f64).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(chi.sf(stat))
}

fn run_replication(cfg: &ScenarioConfig, rep: usize) -> Vec<Record> {
    let seed = derive_seed(cfg.base_seed, rep as u64, 0);
    match replication_records(cfg, rep, seed) {
        Ok(r) => r,
        Err(e) => {
            let mut r = Record::base(rep, seed);
            r.error = Some(e.to_string());
            vec![r]
        }
    }
}

fn replication_records(cfg: &ScenarioConfig, rep: usize, seed: u64) -> Result<Vec<Record>> {
    let data = generate(cfg, derive_seed(seed, 0, 1));
    let learners = build_learners(cfg, &data)?;
    let stopping = match cfg.stopping {
        StoppingSpec::Fixed { m_stop } => Stopping::Fixed(m_stop),
        StoppingSpec::Cv { folds, grid_max } => {
            let f = assign_folds(data.y.len(), folds, derive_seed(seed, 0, 2))?;
            Stopping::Cv { plan: CvPlan::new(&learners, f)?, grid_max }
        }
    };
    let selector = Selector::new(&learners, cfg.nu, stopping)?;
    let (selected, m_stop) = selector.select(&data.y)?;
    let fit = boost_fit(&data.y, &learners, &BoostConfig::new(cfg.nu, m_stop)?)?;
    let sigma2 = match cfg.variance {
        StudyVariance::True => data.sigma * data.sigma,
        StudyVariance::Estimate(mode) => estimate_sigma(&fit, &data.y, &learners, mode)?,
    };
    let admissible = data.signals.iter().all(|j| selected.contains(j));
    let sel: Vec<usize> = selected.iter().copied().collect();
    let selected_str = sel.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(";");

    let blocks: Vec<&DMatrix<f64>> = sel.iter().map(|&j| learners[j].design()).collect();
    let xa = linalg::hstack(&blocks);
    let mut starts = Vec::with_capacity(sel.len());
    let mut acc = 0;
    for &j in &sel {
        starts.push(acc);
        acc += learners[j].p();
    }

    let oracle = SelectionOracle::new(selector.clone(), selected.clone());
    let cert = if cfg.methods.polyhedron && matches!(cfg.stopping, StoppingSpec::Fixed { .. }) {
        PathCertificate::from_fit(&fit, cfg.nu, &learners).ok()
    } else {
        None
    };

    let mut out = Vec::new();
    for (pos, &j) in sel.iter().enumerate() {
        let is_signal = data.signals.contains(&j);
        let mut rec = Record::base(rep, seed);
        rec.admissible = admissible;
        rec.m_stop = m_stop;
        rec.selected = selected_str.clone();
        rec.variable = Some(j);
        rec.is_signal = Some(is_signal);
        let sampler_cfg = SamplerConfig {
            draws: cfg.draws,
            proposal: cfg.proposal,
            alpha: cfg.alpha,
            search: SearchConfig::default(),
            min_accepted: 20,
            seed: derive_seed(seed, j as u64 + 1, 3),
        };
        let with = |rec: &Record, method: Method, f: &dyn Fn(&mut Record) -> Result<()>| {
            let mut r = rec.clone();
            r.method = Some(method);
            if let Err(e) = f(&mut r) {
                r.error = Some(e.to_string());
            }
            r
        };
        if learners[j].p() == 1 {
            let v = test_vector_linear(&xa, starts[pos])?;
            let truth = v.dot(&data.mu);
            rec.kind = Some(TestKind::Coefficient);
            rec.true_value = Some(truth);
            rec.null_holds = Some(truth.abs() <= 1e-9 * data.mu.norm().max(1.0));
            rec.estimate = Some(v.dot(&data.y));
            if cfg.methods.sampling {
                out.push(with(&rec, Method::Sampling, &|r| {
                    let spec = TestSpec::direction(v.clone(), 0.0, sigma2)?;
                    let res = selective_inference(&oracle, &data.y, &spec, &sampler_cfg)?;
                    r.p_value = Some(res.p_value);
                    r.ci_lo = Some(res.ci_lo);
                    r.ci_hi = Some(res.ci_hi);
                    r.ess = Some(res.ess);
                    r.accepted = Some(res.accepted);
                    Ok(())
                }));
            }
            if let Some(cert) = &cert {
                out.push(with(&rec, Method::Polyhedron, &|r| {
                    let iv = truncation_limits_streaming(cert, &v, &data.y)?;
                    r.p_value = Some(polyhedron_pvalue(iv, &v, sigma2, &data.y, 0.0, Alternative::TwoSided)?);
                    let (lo, hi) = polyhedron_ci(iv, &v, sigma2, &data.y, cfg.alpha)?;
                    r.ci_lo = Some(lo);
                    r.ci_hi = Some(hi);
                    Ok(())
                }));
            }
            if cfg.methods.naive {
                out.push(with(&rec, Method::Naive, &|r| {
                    let (p, lo, hi) = naive_direction(&v, &data.y, sigma2, cfg.alpha);
                    r.p_value = Some(p);
                    r.ci_lo = Some(lo);
                    r.ci_hi = Some(hi);
                    Ok(())
                }));
            }
        } else {
            let w = smooth_function_test_basis(&xa, starts[pos]..starts[pos] + learners[j].p())?;
            let truth = (w.transpose() * &data.mu).norm();
            rec.kind = Some(TestKind::Function);
            rec.true_value = Some(truth);
            rec.null_holds = Some(truth <= 1e-9 * data.mu.norm().max(1.0));
            rec.estimate = Some((w.transpose() * &data.y).norm());
            if cfg.methods.sampling {
                out.push(with(&rec, Method::Sampling, &|r| {
                    let spec = TestSpec::group(&w, 0.0, sigma2)?;
                    let res = selective_inference(&oracle, &data.y, &spec, &sampler_cfg)?;
                    r.p_value = Some(res.p_value);
                    r.ess = Some(res.ess);
                    r.accepted = Some(res.accepted);
                    Ok(())
                }));
            }
            if cfg.methods.naive {
                out.push(with(&rec, Method::Naive, &|r| {
                    r.p_value = Some(naive_group(&w, &data.y, sigma2)?);
                    Ok(())
                }));
            }
        }
    }
    if out.is_empty() {
        let mut r = Record::base(rep, seed);
        r.admissible = admissible;
        r.m_stop = m_stop;
        r.selected = selected_str;
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Noise-variable tests on admissible replications.
    pub noise_tests: usize,
    pub ks_noise: Option<f64>,
    pub rejection_noise: Option<f64>,
    pub coverage_noise: Option<f64>,
    pub coverage_signal: Option<f64>,
    pub infinite_ci_rate: Option<f64>,
    /// Per variable: share of all successful replications in which it was
    /// selected and rejected.
    pub rejection_by_variable: BTreeMap<usize, f64>,
    /// Per variable: median p-value over admissible replications.
    pub median_p_by_variable: BTreeMap<usize, f64>,
    pub failed_tests: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub replications: usize,
    pub admissible: usize,
    pub failed_replications: usize,
    pub alpha: f64,
    pub methods: Vec<MethodSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: ScenarioConfig,
    pub records: Vec<Record>,
    pub aggregates: Aggregates,
}

/// Kolmogorov–Smirnov distance of a sample to U[0, 1].
pub fn ks_uniform(p: &[f64]) -> Option<f64> {
    if p.is_empty() {
        return None;
    }
    let mut s: Vec<f64> = p.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let d = s.iter().enumerate().map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n)).fold(0.0, f64::max);
    Some(d)
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let k = s.len();
    Some(if k % 2 == 1 { s[k / 2] } else { 0.5 * (s[k / 2 - 1] + s[k / 2]) })
}

fn share(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Aggregates from records alone.
pub fn aggregate(records: &[Record], alpha: f64) -> Aggregates {
    let mut reps: BTreeMap<usize, (bool, bool)> = BTreeMap::new();
    for r in records {
        let e = reps.entry(r.rep).or_insert((r.admissible, false));
        if r.variable.is_none() && r.error.is_some() {
            e.1 = true;
        }
    }
    let replications = reps.len();
    let failed = reps.values().filter(|(_, f)| *f).count();
    let admissible = reps.values().filter(|(a, f)| *a && !*f).count();
    let ok_reps = replications - failed;

    let mut methods: Vec<Method> = records.iter().filter_map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let summaries = methods
        .into_iter()
        .map(|m| {
            let rs: Vec<&Record> = records.iter().filter(|r| r.method == Some(m)).collect();
            let good: Vec<&&Record> = rs.iter().filter(|r| r.error.is_none() && r.p_value.is_some()).collect();
            let noise: Vec<f64> =
                good.iter().filter(|r| r.admissible && r.is_signal == Some(false)).filter_map(|r| r.p_value).collect();
            let coverage = |signal: bool| {
                let c: Vec<bool> = good
                    .iter()
                    .filter(|r| r.admissible && r.is_signal == Some(signal))
                    .filter_map(|r| r.covers())
                    .collect();
                share(c.iter().filter(|x| **x).count(), c.len())
            };
            let with_ci: Vec<&&&Record> = good.iter().filter(|r| r.ci_lo.is_some()).collect();
            let infinite =
                with_ci.iter().filter(|r| !(r.ci_lo.unwrap().is_finite() && r.ci_hi.unwrap().is_finite())).count();
            let mut rejection_by_variable = BTreeMap::new();
            let mut by_var: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for r in &good {
                let j = r.variable.unwrap();
                let p = r.p_value.unwrap();
                *rejection_by_variable.entry(j).or_insert(0.0) += if p < alpha { 1.0 } else { 0.0 };
                if r.admissible {
                    by_var.entry(j).or_default().push(p);
                }
            }
            for v in rejection_by_variable.values_mut() {
                *v /= ok_reps.max(1) as f64;
            }
            MethodSummary {
                method: m,
                noise_tests: noise.len(),
                ks_noise: ks_uniform(&noise),
                rejection_noise: share(noise.iter().filter(|p| **p < alpha).count(), noise.len()),
                coverage_noise: coverage(false),
                coverage_signal: coverage(true),
                infinite_ci_rate: share(infinite, with_ci.len()),
                rejection_by_variable,
                median_p_by_variable: by_var.into_iter().filter_map(|(j, v)| median(&v).map(|m| (j, m))).collect(),
                failed_tests: rs.iter().filter(|r| r.error.is_some()).count(),
            }
        })
        .collect();
    Aggregates { replications, admissible, failed_replications: failed, alpha, methods: summaries }
}

/// Run every replication (in parallel), order records by replication and
/// aggregate.
pub fn run_study(cfg: &ScenarioConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let per_rep: Vec<Vec<Record>> =
        (0..cfg.replications).into_par_iter().map(|rep| run_replication(cfg, rep)).collect();
    let records: Vec<Record> = per_rep.into_iter().flatten().collect();
    let aggregates = aggregate(&records, cfg.alpha);
    Ok(StudyResult { config: cfg.clone(), records, aggregates })
}

pub fn write_records<W: Write>(records: &[Record], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<Record>> {
    let mut rd = csv::Reader::from_reader(input);
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}
