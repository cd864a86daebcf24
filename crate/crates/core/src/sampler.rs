//! Monte Carlo inference conditioning only on the selected set.
//!
//! The response is moved along a line `y(r) = anchor + r·direction` through
//! the observation; the selection is rerun at sampled `r`, and the
//! congruent draws are reweighted to the null reference density of `R`.
//! The exponential tilt in the mean parameter is analytic, so a single
//! batch serves the p-value and the whole interval inversion.

use std::collections::BTreeSet;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::{invert_increasing, InvertOptions};
use crate::linalg::{self, SpdFactor};
use crate::normal::{log_sum_exp, normal_log_pdf, scaled_chi_log_pdf};
use crate::stopping::Selector;

/// Singular values below this fraction of the largest are dropped when a
/// test basis is orthonormalized.
pub const BASIS_REL_TOL: f64 = 1e-8;

/// Decides whether a perturbed response reproduces the reference selection.
pub trait Congruency: Sync {
    fn is_congruent(&self, y: &DVector<f64>) -> Result<bool>;
}

/// Congruency = the rerun selects exactly the reference set.
pub struct SelectionOracle<'a> {
    selector: Selector<'a>,
    reference: BTreeSet<usize>,
    mask: Vec<bool>,
}

impl<'a> SelectionOracle<'a> {
    pub fn new(selector: Selector<'a>, reference: BTreeSet<usize>) -> Self {
        let mut mask = vec![false; selector.learners().len()];
        for &j in &reference {
            if j < mask.len() {
                mask[j] = true;
            }
        }
        Self { selector, reference, mask }
    }

    /// Oracle whose reference set is the selection on `y` itself.
    pub fn from_observed(selector: Selector<'a>, y: &DVector<f64>) -> Result<Self> {
        let (reference, _) = selector.select(y)?;
        Ok(Self::new(selector, reference))
    }

    pub fn reference(&self) -> &BTreeSet<usize> {
        &self.reference
    }

    pub fn selector(&self) -> &Selector<'a> {
        &self.selector
    }
}

impl Congruency for SelectionOracle<'_> {
    fn is_congruent(&self, y: &DVector<f64>) -> Result<bool> {
        Ok(self.selector.reproduces(y, &self.mask))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TestMode {
    Direction { v: DVector<f64> },
    Group { w: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSpec {
    pub mode: TestMode,
    pub null_value: f64,
    pub sigma2: f64,
}

impl TestSpec {
    pub fn direction(v: DVector<f64>, null_value: f64, sigma2: f64) -> Result<Self> {
        if !(v.norm_squared() > 0.0) || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("test vector must be finite and non-zero".into()));
        }
        Self::check_common(null_value, sigma2)?;
        Ok(Self { mode: TestMode::Direction { v }, null_value, sigma2 })
    }

    /// The columns of `w` are re-orthonormalized; its numerical rank sets
    /// the degrees of freedom.
    pub fn group(w: &DMatrix<f64>, null_value: f64, sigma2: f64) -> Result<Self> {
        Self::check_common(null_value, sigma2)?;
        let q = linalg::orthonormal_basis(w, BASIS_REL_TOL);
        if q.ncols() == 0 {
            return Err(Error::EmptyBasis);
        }
        Ok(Self { mode: TestMode::Group { w: q }, null_value, sigma2 })
    }

    fn check_common(null_value: f64, sigma2: f64) -> Result<()> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidInput(format!("variance must be positive, got {sigma2}")));
        }
        if !null_value.is_finite() {
            return Err(Error::InvalidInput("null value must be finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match &self.mode {
            TestMode::Direction { .. } => 1,
            TestMode::Group { w } => w.ncols(),
        }
    }

    pub fn n(&self) -> usize {
        match &self.mode {
            TestMode::Direction { v } => v.len(),
            TestMode::Group { w } => w.nrows(),
        }
    }

    pub fn is_group(&self) -> bool {
        matches!(self.mode, TestMode::Group { .. })
    }

    /// Variance of `R` around its mean: `σ²vᵀv`, or `σ²` in group mode.
    pub fn r_variance(&self) -> f64 {
        match &self.mode {
            TestMode::Direction { v } => self.sigma2 * v.norm_squared(),
            TestMode::Group { .. } => self.sigma2,
        }
    }

    pub fn r_sd(&self) -> f64 {
        self.r_variance().sqrt()
    }

    /// Log density of `R` under the null reference measure.
    pub fn target_log_density(&self, r: f64) -> f64 {
        match &self.mode {
            TestMode::Direction { .. } => normal_log_pdf(r, 0.0, self.r_variance()),
            TestMode::Group { w } => scaled_chi_log_pdf(r, w.ncols(), self.sigma2.sqrt()),
        }
    }
}

/// `v = X_A (X_AᵀX_A)⁻¹ e_j`, so `vᵀy` is the least-squares coefficient of
/// column `j` in the selected model.
pub fn test_vector_linear(xa: &DMatrix<f64>, j: usize) -> Result<DVector<f64>> {
    if j >= xa.ncols() {
        return Err(Error::InvalidInput(format!("column {j} out of range")));
    }
    let mut e = DVector::zeros(xa.ncols());
    e[j] = 1.0;
    functional_vector(xa, &e)
}

/// `v = X_A (X_AᵀX_A)⁻¹ a` for a coefficient functional `a`.
fn functional_vector(xa: &DMatrix<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
    let gram = xa.transpose() * xa;
    let chol = SpdFactor::new(&gram)
        .map_err(|_| Error::RankDeficient { rank: linalg::numerical_rank(xa, 1e-10), n: xa.ncols() })?;
    Ok(xa * chol.solve(a))
}

/// Orthonormal basis of the group columns after removing the other
/// selected columns. Directions that are numerically inside the span of
/// `others` are dropped.
pub fn test_matrix_group(others: &DMatrix<f64>, group: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if others.nrows() != group.nrows() && others.ncols() > 0 {
        return Err(Error::InvalidInput("row count mismatch".into()));
    }
    if group.ncols() == 0 {
        return Err(Error::EmptyBasis);
    }
    let scale = group.singular_values().max();
    if !(scale > 0.0) {
        return Err(Error::EmptyBasis);
    }
    let q =
        if others.ncols() == 0 { DMatrix::zeros(group.nrows(), 0) } else { linalg::orthonormal_basis(others, 1e-10) };
    let resid = linalg::residualize_columns(&q, group);
    let rmax = resid.singular_values().max();
    if rmax <= BASIS_REL_TOL * scale {
        return Err(Error::EmptyBasis);
    }
    let w = linalg::orthonormal_basis(&resid, BASIS_REL_TOL * scale / rmax);
    if w.ncols() == 0 {
        return Err(Error::EmptyBasis);
    }
    Ok(w)
}

/// Test vector for the value of a smooth term at one covariate value:
/// `row` is the term's design row at that value, placed into `block` of a
/// full design row.
pub fn smooth_pointwise_vector(xa: &DMatrix<f64>, block: Range<usize>, row: &DVector<f64>) -> Result<DVector<f64>> {
    if block.end > xa.ncols() || block.len() != row.len() {
        return Err(Error::InvalidInput("spline block does not match the design".into()));
    }
    let mut a = DVector::zeros(xa.ncols());
    a.rows_mut(block.start, block.len()).copy_from(row);
    functional_vector(xa, &a)
}

/// Basis for testing a whole smooth term: its design block residualized on
/// the remaining selected columns.
pub fn smooth_function_test_basis(xa: &DMatrix<f64>, block: Range<usize>) -> Result<DMatrix<f64>> {
    if block.end > xa.ncols() || block.is_empty() {
        return Err(Error::InvalidInput("spline block does not match the design".into()));
    }
    let keep: Vec<usize> = (0..xa.ncols()).filter(|c| !block.contains(c)).collect();
    let others = xa.select_columns(keep.iter());
    let group = xa.columns(block.start, block.len()).into_owned();
    test_matrix_group(&others, &group)
}

/// The line `y(r) = anchor + r·direction` with `y(r_obs) = y`.
#[derive(Debug, Clone)]
pub struct Line {
    pub anchor: DVector<f64>,
    pub direction: DVector<f64>,
    pub r_obs: f64,
}

impl Line {
    pub fn at(&self, r: f64) -> DVector<f64> {
        let mut y = self.anchor.clone();
        y.axpy(r, &self.direction, 1.0);
        y
    }
}

pub fn decompose(y: &DVector<f64>, spec: &TestSpec) -> Result<Line> {
    if y.len() != spec.n() {
        return Err(Error::InvalidInput("response length does not match the test".into()));
    }
    match &spec.mode {
        TestMode::Direction { v } => {
            let direction = v / v.norm_squared();
            let r_obs = v.dot(y);
            let anchor = y - &direction * r_obs;
            Ok(Line { anchor, direction, r_obs })
        }
        TestMode::Group { w } => {
            let pw = w * (w.transpose() * y);
            let r_obs = pw.norm();
            if !(r_obs > 0.0) {
                return Err(Error::InvalidInput("response is orthogonal to the test space".into()));
            }
            let anchor = y - &pw;
            Ok(Line { anchor, direction: pw / r_obs, r_obs })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    UniformBracket,
    NormalAtObs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Bisection steps per side.
    pub bisect_steps: usize,
    /// Evenly spaced probes per side, scanned from the hard bound inwards.
    pub scan_points: usize,
    /// Hard bound distance from `r_obs` in units of `sd(R)`.
    pub hard_bound_sd: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { bisect_steps: 25, scan_points: 8, hard_bound_sd: 8.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lo: f64,
    pub up: f64,
    pub unbounded_lo: bool,
    pub unbounded_up: bool,
    pub refits: usize,
}

impl Bracket {
    pub fn width(&self) -> f64 {
        self.up - self.lo
    }
}

/// Outer limits of the congruent support along the line. Each side is
/// scanned from its hard bound towards `r_obs`; the boundary behind the
/// first congruent probe is refined by bisection, and the last
/// non-congruent point is returned. If the hard bound itself is congruent
/// the side is flagged unbounded.
pub fn line_search_bracket<P>(
    congruent: P,
    r_obs: f64,
    sigma_r: f64,
    lower_hard: Option<f64>,
    cfg: &SearchConfig,
) -> Result<Bracket>
where
    P: Fn(f64) -> Result<bool>,
{
    if !(sigma_r > 0.0) {
        return Err(Error::InvalidInput("sd(R) must be positive".into()));
    }
    let mut refits = 1;
    if !congruent(r_obs)? {
        return Err(Error::NotSelfCongruent);
    }
    let reach = cfg.hard_bound_sd * sigma_r;
    let hard_lo = lower_hard.map_or(r_obs - reach, |h| h.max(r_obs - reach));
    let hard_up = r_obs + reach;
    let mut side = |hard: f64| -> Result<(f64, bool)> {
        let k = cfg.scan_points.max(1);
        let mut outer = hard;
        let mut inner = r_obs;
        for i in 0..k {
            let r = hard + (r_obs - hard) * i as f64 / k as f64;
            refits += 1;
            if congruent(r)? {
                if i == 0 {
                    return Ok((hard, true));
                }
                inner = r;
                break;
            }
            outer = r;
        }
        for _ in 0..cfg.bisect_steps {
            let mid = 0.5 * (inner + outer);
            refits += 1;
            if congruent(mid)? {
                inner = mid;
            } else {
                outer = mid;
            }
        }
        Ok((outer, false))
    };
    let (lo, unbounded_lo) = side(hard_lo)?;
    let (up, unbounded_up) = side(hard_up)?;
    Ok(Bracket { lo, up, unbounded_lo, unbounded_up, refits })
}

#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub draws: Vec<f64>,
    pub congruent: Vec<bool>,
    /// `log f_target(r) − log f_prop(r)`.
    pub log_weights: Vec<f64>,
    pub proposal: Proposal,
    pub bracket: Option<Bracket>,
    pub r_obs: f64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    pub fn accepted(&self) -> usize {
        self.congruent.iter().filter(|c| **c).count()
    }
}

/// Proposal draws only. The uniform proposal is stratified: the bracket is
/// split at `r_obs` and each side into equal cells with one draw per cell,
/// cells allotted in proportion to the side widths. Draw `b` uses its own
/// seeded substream.
pub fn proposal_draws(
    spec: &TestSpec,
    r_obs: f64,
    bracket: Option<&Bracket>,
    b: usize,
    seed: u64,
    proposal: Proposal,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if b == 0 {
        return Err(Error::InvalidInput("number of draws must be >= 1".into()));
    }
    let stream = |i: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        rng
    };
    let mut draws = Vec::with_capacity(b);
    let mut lw = Vec::with_capacity(b);
    match proposal {
        Proposal::UniformBracket => {
            let br = bracket.ok_or_else(|| Error::InvalidInput("uniform proposal needs a bracket".into()))?;
            if !(br.up > br.lo) {
                return Err(Error::InvalidInput("empty bracket".into()));
            }
            // Cells never straddle r_obs, and each non-empty side gets at
            // least one draw, so the tail indicator is never left unsampled.
            let r0 = r_obs.clamp(br.lo, br.up);
            let (w_lo, w_up) = (r0 - br.lo, br.up - r0);
            let mut b_up = (b as f64 * w_up / (br.up - br.lo)).round() as usize;
            if w_up > 0.0 {
                b_up = b_up.max(1);
            }
            if w_lo > 0.0 && b > 1 {
                b_up = b_up.min(b - 1);
            }
            let mut i = 0;
            for (start, w, count) in [(br.lo, w_lo, b - b_up), (r0, w_up, b_up)] {
                let cell = w / count.max(1) as f64;
                for k in 0..count {
                    let u: f64 = stream(i).gen();
                    let r = start + (k as f64 + u) * cell;
                    draws.push(r);
                    lw.push(spec.target_log_density(r) + cell.ln());
                    i += 1;
                }
            }
        }
        Proposal::NormalAtObs => {
            let var = spec.r_variance();
            let sd = var.sqrt();
            for i in 0..b {
                let z: f64 = stream(i).sample(StandardNormal);
                let r = r_obs + sd * z;
                draws.push(r);
                let w = match &spec.mode {
                    TestMode::Direction { .. } => (2.0 * r * r_obs - r_obs * r_obs) / (-2.0 * var),
                    TestMode::Group { .. } => spec.target_log_density(r) - normal_log_pdf(r, r_obs, var),
                };
                lw.push(w);
            }
        }
    }
    Ok((draws, lw))
}

/// Draw a batch and evaluate congruency at every draw (in parallel, order
/// preserved).
pub fn draw_batch<P>(
    congruent: P,
    spec: &TestSpec,
    r_obs: f64,
    bracket: Option<Bracket>,
    b: usize,
    seed: u64,
    proposal: Proposal,
) -> Result<SampleBatch>
where
    P: Fn(f64) -> Result<bool> + Sync,
{
    let (draws, log_weights) = proposal_draws(spec, r_obs, bracket.as_ref(), b, seed, proposal)?;
    let flags = draws.par_iter().map(|&r| congruent(r)).collect::<Result<Vec<bool>>>()?;
    if !flags.iter().any(|c| *c) {
        return Err(Error::NoAcceptedSamples);
    }
    Ok(SampleBatch { draws, congruent: flags, log_weights, proposal, bracket, r_obs })
}

/// `ς(t)`: tilted probability that `R` exceeds `r_obs` among congruent
/// draws.
pub fn pvalue_hat(batch: &SampleBatch, spec: &TestSpec, t: f64) -> Result<f64> {
    let var = spec.r_variance();
    let mut all = Vec::new();
    let mut above = Vec::new();
    for i in 0..batch.len() {
        if !batch.congruent[i] {
            continue;
        }
        let r = batch.draws[i];
        let l = batch.log_weights[i] + r * t / var;
        all.push(l);
        if r > batch.r_obs {
            above.push(l);
        }
    }
    if all.is_empty() {
        return Err(Error::NoAcceptedSamples);
    }
    let den = log_sum_exp(all);
    if !den.is_finite() {
        return Err(Error::MonteCarloDegenerate);
    }
    let num = log_sum_exp(above);
    Ok((num - den).exp().clamp(0.0, 1.0))
}

pub fn two_sided(s: f64) -> f64 {
    (2.0 * s.min(1.0 - s)).clamp(0.0, 1.0)
}

/// Equal-tailed interval from `ς(ρ) = α/2` and `ς(ρ) = 1 − α/2`.
pub fn invert_ci(batch: &SampleBatch, spec: &TestSpec, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha {alpha} not in (0, 1)")));
    }
    let sd = spec.r_sd();
    let f = |rho: f64| pvalue_hat(batch, spec, rho);
    let opts = InvertOptions::default();
    let lo = invert_increasing(f, batch.r_obs, sd, alpha / 2.0, opts)?;
    let hi = invert_increasing(f, batch.r_obs, sd, 1.0 - alpha / 2.0, opts)?;
    Ok((lo, hi))
}

/// `(Σw)² / Σw²`, computed in log space.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
    }
    let logs: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    log_ess(&logs)
}

fn log_ess(log_w: &[f64]) -> Result<f64> {
    let s1 = log_sum_exp(log_w.iter().copied());
    if s1 == f64::NEG_INFINITY {
        return Err(Error::InvalidInput("all weights are zero".into()));
    }
    let s2 = log_sum_exp(log_w.iter().map(|l| 2.0 * l));
    Ok((2.0 * s1 - s2).exp())
}

/// ESS of the congruent part of a batch.
pub fn batch_ess(batch: &SampleBatch) -> Result<f64> {
    let lw: Vec<f64> = (0..batch.len()).filter(|&i| batch.congruent[i]).map(|i| batch.log_weights[i]).collect();
    log_ess(&lw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub draws: usize,
    pub proposal: Proposal,
    pub alpha: f64,
    pub search: SearchConfig,
    pub min_accepted: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            draws: 1000,
            proposal: Proposal::UniformBracket,
            alpha: 0.05,
            search: SearchConfig::default(),
            min_accepted: 20,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub bracket: Option<Bracket>,
    pub refits: usize,
    pub low_accuracy: bool,
    pub infinite_ci: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    /// Two-sided in direction mode, one-sided `ς` in group mode.
    pub p_value: f64,
    pub one_sided: f64,
    /// `vᵀy`, or `‖P_W y‖` in group mode.
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub ess: f64,
    pub accepted: usize,
    pub draws: usize,
    pub diagnostics: Diagnostics,
}

/// Full Monte Carlo test of `spec` on `y` with the given congruency oracle.
pub fn selective_inference<C: Congruency + ?Sized>(
    oracle: &C,
    y: &DVector<f64>,
    spec: &TestSpec,
    cfg: &SamplerConfig,
) -> Result<InferenceResult> {
    let line = decompose(y, spec)?;
    let pred = |r: f64| oracle.is_congruent(&line.at(r));
    infer_on_line(pred, line.r_obs, spec, cfg)
}

/// Same as [`selective_inference`] with the congruency test expressed as a
/// predicate in `r`.
pub fn infer_on_line<P>(pred: P, r_obs: f64, spec: &TestSpec, cfg: &SamplerConfig) -> Result<InferenceResult>
where
    P: Fn(f64) -> Result<bool> + Sync,
{
    let sd = spec.r_sd();
    let lower_hard = if spec.is_group() { Some(0.0) } else { None };
    let (bracket, mut refits) = match cfg.proposal {
        Proposal::UniformBracket => {
            let br = line_search_bracket(&pred, r_obs, sd, lower_hard, &cfg.search)?;
            (Some(br), br.refits)
        }
        Proposal::NormalAtObs => {
            if !pred(r_obs)? {
                return Err(Error::NotSelfCongruent);
            }
            (None, 1)
        }
    };
    let batch = draw_batch(&pred, spec, r_obs, bracket, cfg.draws, cfg.seed, cfg.proposal)?;
    refits += batch.len();
    let one_sided = pvalue_hat(&batch, spec, spec.null_value)?;
    let p_value = if spec.is_group() { one_sided } else { two_sided(one_sided) };
    let (ci_lo, ci_hi) = invert_ci(&batch, spec, cfg.alpha)?;
    let accepted = batch.accepted();
    Ok(InferenceResult {
        p_value,
        one_sided,
        estimate: r_obs,
        ci_lo,
        ci_hi,
        ess: batch_ess(&batch)?,
        accepted,
        draws: batch.len(),
        diagnostics: Diagnostics {
            bracket,
            refits,
            low_accuracy: accepted < cfg.min_accepted,
            infinite_ci: !(ci_lo.is_finite() && ci_hi.is_finite()),
        },
    })
}
