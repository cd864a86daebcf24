//! Component-wise L2-Boosting.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselearner::BaseLearner;
use crate::error::{Error, Result};
use crate::linalg;

/// Relative tolerance under which two SSE reductions are treated as tied.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub step_length: f64,
    pub m_stop: usize,
}

impl BoostConfig {
    pub fn new(step_length: f64, m_stop: usize) -> Result<Self> {
        let c = Self { step_length, m_stop };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_length > 0.0 && self.step_length <= 1.0) {
            return Err(Error::InvalidInput(format!("step length {} not in (0, 1]", self.step_length)));
        }
        if self.m_stop < 1 {
            return Err(Error::InvalidInput("m_stop must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostFit {
    /// Learner index chosen in each iteration.
    pub path: Vec<usize>,
    /// `sign(X_jᵀ u)` of the chosen learner; `None` for multi-column learners.
    pub signs: Vec<Option<i8>>,
    pub fitted: DVector<f64>,
    /// Aggregated coefficients `ν Σ_m coef^(m)` per selected learner.
    pub coefficients: BTreeMap<usize, DVector<f64>>,
    pub residuals: DVector<f64>,
    /// `‖u^(m)‖²` for m = 1..=m_stop+1.
    pub rss_path: Vec<f64>,
}

impl BoostFit {
    pub fn selected_set(&self) -> BTreeSet<usize> {
        selection_set(&self.path)
    }

    pub fn m_stop(&self) -> usize {
        self.path.len()
    }
}

/// Distinct learner indices appearing in a path, ascending.
pub fn selection_set(path: &[usize]) -> BTreeSet<usize> {
    path.iter().copied().collect()
}

pub(crate) fn check_inputs(y: &DVector<f64>, learners: &[BaseLearner]) -> Result<()> {
    if learners.is_empty() {
        return Err(Error::InvalidInput("empty learner list".into()));
    }
    let n = y.len();
    if let Some(bl) = learners.iter().find(|bl| bl.n() != n) {
        return Err(Error::InvalidInput(format!("learner {} has {} rows, response has {n}", bl.id(), bl.n())));
    }
    let m = linalg::mean(y);
    let scale = y.amax().max(1.0);
    if m.abs() > 1e-10 * scale {
        return Err(Error::NotCentered(m));
    }
    Ok(())
}

/// Largest stacked design width for which [`GramCache`] is built.
pub const GRAM_CACHE_MAX_COLS: usize = 4096;

/// Cross products `X_jᵀX_k` of all learner designs, so repeated runs can
/// update every `X_jᵀu` in `O(Σp)` per step instead of `O(nΣp)`.
#[derive(Debug, Clone)]
pub struct GramCache {
    offsets: Vec<usize>,
    cross: DMatrix<f64>,
}

impl GramCache {
    /// `None` when the stacked design is too wide to cache.
    pub fn new(learners: &[BaseLearner]) -> Option<Self> {
        let total: usize = learners.iter().map(|bl| bl.p()).sum();
        if learners.is_empty() || total > GRAM_CACHE_MAX_COLS {
            return None;
        }
        let mut offsets = Vec::with_capacity(learners.len() + 1);
        let mut acc = 0;
        for bl in learners {
            offsets.push(acc);
            acc += bl.p();
        }
        offsets.push(acc);
        let blocks: Vec<&DMatrix<f64>> = learners.iter().map(|bl| bl.design()).collect();
        let x = linalg::hstack(&blocks);
        Some(Self { offsets, cross: x.transpose() * x })
    }

    fn stacked_xtu(&self, learners: &[BaseLearner], y: &[f64]) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.cross.nrows());
        for bl in learners {
            let n = bl.n();
            let x = bl.design().as_slice();
            for j in 0..bl.p() {
                g.push(linalg_dot(&x[j * n..(j + 1) * n], y));
            }
        }
        g
    }
}

/// Reusable buffers and the incremental state of one boosting run. With a
/// [`GramCache`] the residual itself is not tracked, only `Xᵀu` and `‖u‖²`.
pub(crate) struct BoostState<'a> {
    learners: &'a [BaseLearner],
    nu: f64,
    gram: Option<&'a GramCache>,
    pub(crate) residual: Vec<f64>,
    g: Vec<f64>,
    u_sq: f64,
    xtu: Vec<f64>,
    coef: Vec<f64>,
    best_coef: Vec<f64>,
}

pub(crate) struct Step {
    pub learner: usize,
    pub sign: Option<i8>,
    pub rss_before: f64,
}

impl<'a> BoostState<'a> {
    pub(crate) fn new(y: &[f64], learners: &'a [BaseLearner], nu: f64) -> Self {
        Self {
            learners,
            nu,
            gram: None,
            residual: y.to_vec(),
            g: Vec::new(),
            u_sq: 0.0,
            xtu: Vec::new(),
            coef: Vec::new(),
            best_coef: Vec::new(),
        }
    }

    pub(crate) fn with_gram(y: &[f64], learners: &'a [BaseLearner], nu: f64, gram: Option<&'a GramCache>) -> Self {
        match gram {
            None => Self::new(y, learners, nu),
            Some(cache) => Self {
                learners,
                nu,
                gram: Some(cache),
                residual: Vec::new(),
                g: cache.stacked_xtu(learners, y),
                u_sq: linalg_dot(y, y),
                xtu: Vec::new(),
                coef: Vec::new(),
                best_coef: Vec::new(),
            },
        }
    }

    /// One boosting iteration.
    pub(crate) fn step(&mut self) -> Step {
        let u_sq = match self.gram {
            None => linalg_dot(&self.residual, &self.residual),
            Some(_) => self.u_sq,
        };
        let mut best = usize::MAX;
        let mut best_gain = f64::NEG_INFINITY;
        let mut best_sign = None;
        for (j, bl) in self.learners.iter().enumerate() {
            match self.gram {
                None => bl.fill_xtu(&self.residual, &mut self.xtu),
                Some(cache) => {
                    self.xtu.clear();
                    self.xtu.extend_from_slice(&self.g[cache.offsets[j]..cache.offsets[j + 1]]);
                }
            }
            // SSE = u_sq - gain; comparing gains avoids cancellation near a
            // perfect fit
            let gain = bl.gain_from_xtu(&self.xtu, &mut self.coef);
            let better = best == usize::MAX || gain > best_gain + TIE_TOL * best_gain.abs();
            if better {
                best = j;
                best_gain = gain;
                best_sign = if bl.p() == 1 { Some(if self.xtu[0] < 0.0 { -1 } else { 1 }) } else { None };
                std::mem::swap(&mut self.best_coef, &mut self.coef);
            }
        }
        let bl = &self.learners[best];
        match self.gram {
            None => bl.add_fitted(&self.best_coef, -self.nu, &mut self.residual),
            Some(cache) => {
                let off = cache.offsets[best];
                let p = bl.p();
                let gk = &self.g[off..off + p];
                let c = &self.best_coef;
                let gc: f64 = gk.iter().zip(c).map(|(a, b)| a * b).sum();
                let gram = bl.gram().as_slice();
                let mut quad = 0.0;
                for a in 0..p {
                    let mut s = 0.0;
                    for b in 0..p {
                        s += gram[b * p + a] * c[b];
                    }
                    quad += c[a] * s;
                }
                self.u_sq = u_sq - 2.0 * self.nu * gc + self.nu * self.nu * quad;
                let total = cache.cross.nrows();
                let cross = cache.cross.as_slice();
                for (b, &cb) in c.iter().enumerate() {
                    let a = self.nu * cb;
                    let col = &cross[(off + b) * total..(off + b + 1) * total];
                    for (gv, &xv) in self.g.iter_mut().zip(col) {
                        *gv -= a * xv;
                    }
                }
            }
        }
        Step { learner: best, sign: best_sign, rss_before: u_sq }
    }

    /// Unshrunken coefficients of the learner chosen in the last step.
    pub(crate) fn last_coef(&self) -> &[f64] {
        &self.best_coef
    }

    pub(crate) fn residual_sq(&self) -> f64 {
        match self.gram {
            None => linalg_dot(&self.residual, &self.residual),
            Some(_) => self.u_sq,
        }
    }
}

#[inline]
fn linalg_dot(a: &[f64], b: &[f64]) -> f64 {
    crate::baselearner::dot(a, b)
}

/// Run `cfg.m_stop` boosting iterations on the centered response `y`.
pub fn boost_fit(y: &DVector<f64>, learners: &[BaseLearner], cfg: &BoostConfig) -> Result<BoostFit> {
    cfg.validate()?;
    check_inputs(y, learners)?;
    let mut state = BoostState::new(y.as_slice(), learners, cfg.step_length);
    let mut path = Vec::with_capacity(cfg.m_stop);
    let mut signs = Vec::with_capacity(cfg.m_stop);
    let mut rss_path = Vec::with_capacity(cfg.m_stop + 1);
    let mut coefficients: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    for _ in 0..cfg.m_stop {
        let step = state.step();
        path.push(step.learner);
        signs.push(step.sign);
        rss_path.push(step.rss_before);
        let entry = coefficients.entry(step.learner).or_insert_with(|| DVector::zeros(learners[step.learner].p()));
        for (e, c) in entry.iter_mut().zip(state.last_coef()) {
            *e += cfg.step_length * c;
        }
    }
    rss_path.push(state.residual_sq());
    let residuals = DVector::from_vec(state.residual);
    let fitted = y - &residuals;
    Ok(BoostFit { path, signs, fitted, coefficients, residuals, rss_path })
}

/// Only the path and signs; avoids building the coefficient record.
pub fn boost_path(
    y: &DVector<f64>,
    learners: &[BaseLearner],
    cfg: &BoostConfig,
) -> Result<(Vec<usize>, Vec<Option<i8>>)> {
    check_inputs(y, learners)?;
    Ok(boost_path_unchecked(y.as_slice(), learners, cfg.step_length, cfg.m_stop, None))
}

pub(crate) fn boost_path_unchecked(
    y: &[f64],
    learners: &[BaseLearner],
    nu: f64,
    m_stop: usize,
    gram: Option<&GramCache>,
) -> (Vec<usize>, Vec<Option<i8>>) {
    let mut state = BoostState::with_gram(y, learners, nu, gram);
    let mut path = Vec::with_capacity(m_stop);
    let mut signs = Vec::with_capacity(m_stop);
    for _ in 0..m_stop {
        let s = state.step();
        path.push(s.learner);
        signs.push(s.sign);
    }
    (path, signs)
}

/// Whether `m_stop` iterations select exactly the learners flagged in
/// `mask`. Stops at the first learner outside the mask.
pub(crate) fn selects_exactly(
    y: &[f64],
    learners: &[BaseLearner],
    nu: f64,
    m_stop: usize,
    mask: &[bool],
    gram: Option<&GramCache>,
) -> bool {
    let mut state = BoostState::with_gram(y, learners, nu, gram);
    let mut seen = vec![false; learners.len()];
    for _ in 0..m_stop {
        let j = state.step().learner;
        if !mask[j] {
            return false;
        }
        seen[j] = true;
    }
    seen == mask
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum VarianceMode {
    Known(f64),
    BoostResidual,
    Response,
    OlsRefit,
}

/// Error variance estimate used by the selective tests.
pub fn estimate_sigma(fit: &BoostFit, y: &DVector<f64>, learners: &[BaseLearner], mode: VarianceMode) -> Result<f64> {
    let n = y.len();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two observations".into()));
    }
    let s2 = match mode {
        VarianceMode::Known(s2) => s2,
        VarianceMode::BoostResidual => (y - &fit.fitted).norm_squared() / (n - 1) as f64,
        VarianceMode::Response => {
            let m = linalg::mean(y);
            y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
        }
        VarianceMode::OlsRefit => {
            let blocks: Vec<&DMatrix<f64>> = fit.selected_set().iter().map(|&j| learners[j].design()).collect();
            let xa = linalg::hstack(&blocks);
            let q = linalg::orthonormal_basis(&xa, 1e-10);
            let rank = q.ncols();
            if rank >= n {
                return Err(Error::RankDeficient { rank, n });
            }
            linalg::residualize(&q, y).norm_squared() / (n - rank) as f64
        }
    };
    // relative cutoff: an exact fit leaves rounding-level residuals
    let floor = match mode {
        VarianceMode::Known(_) => 0.0,
        _ => 1e-20 * (y.norm_squared() / y.len() as f64).max(f64::MIN_POSITIVE),
    };
    if !(s2 > floor) || !s2.is_finite() {
        return Err(Error::ZeroVariance);
    }
    Ok(s2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn centered(v: Vec<f64>) -> DVector<f64> {
        let y = DVector::from_vec(v);
        let m = linalg::mean(&y);
        y.add_scalar(-m)
    }

    fn random_learners(n: usize, p: usize, seed: u64) -> (Vec<BaseLearner>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
        let x = linalg::center_columns(&x, &linalg::column_means(&x));
        let ls = (0..p).map(|j| BaseLearner::linear(j, format!("x{j}"), &x.column(j).into()).unwrap()).collect();
        (ls, x)
    }

    #[test]
    fn long_run_reaches_least_squares() {
        // near the optimum all SSE values agree to many digits; the choice
        // must still follow the largest reduction
        let (ls, x) = random_learners(100, 8, 41);
        let y = DVector::from_fn(100, |i, _| x[(i, 0)] * 2.0 - x[(i, 3)] + ((i * 37) % 11) as f64 / 11.0 - 0.5);
        let y = y.add_scalar(-linalg::mean(&y));
        let fit = boost_fit(&y, &ls, &BoostConfig::new(0.1, 5000).unwrap()).unwrap();
        let beta = linalg::ols(&x, &y).unwrap();
        for j in 0..8 {
            assert!((fit.coefficients[&j][0] - beta[j]).abs() < 1e-9, "coef {j}");
        }
    }

    #[test]
    fn single_full_step_is_ols() {
        let x = centered(vec![1.0, 2.0, 4.0, 7.0, 3.0]);
        let y = centered(vec![0.5, 1.0, 2.5, 2.0, -1.0]);
        let bl = vec![BaseLearner::linear(0, "x", &x).unwrap()];
        let fit = boost_fit(&y, &bl, &BoostConfig::new(1.0, 1).unwrap()).unwrap();
        let beta = x.dot(&y) / x.dot(&x);
        assert!((fit.coefficients[&0][0] - beta).abs() < 1e-12);
        assert!(x.dot(&fit.residuals).abs() < 1e-10);
    }

    #[test]
    fn shrunken_repeats_follow_geometric_series() {
        let x = centered(vec![1.0, -2.0, 0.5, 3.0, 1.5, -0.7]);
        let y = centered(vec![0.3, -1.0, 2.0, 1.0, 0.1, -0.2]);
        let bl = vec![BaseLearner::linear(0, "x", &x).unwrap()];
        let beta = x.dot(&y) / x.dot(&x);
        for m in [1usize, 7, 25] {
            let fit = boost_fit(&y, &bl, &BoostConfig::new(0.1, m).unwrap()).unwrap();
            let expect = (1.0 - 0.9f64.powi(m as i32)) * beta;
            assert!((fit.coefficients[&0][0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn switch_iteration_matches_scalar_recursion() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let x1 = DVector::from_vec(vec![s, -s, 0.0, 0.0, 0.0, 0.0]);
        let x2 = DVector::from_vec(vec![0.0, 0.0, s, -s, 0.0, 0.0]);
        let z = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 0.5, -0.5]);
        let y = &x1 * 3.0 + &x2 * 1.0 + z;
        let bls = vec![BaseLearner::linear(0, "x1", &x1).unwrap(), BaseLearner::linear(1, "x2", &x2).unwrap()];
        let m = 30;
        let fit = boost_fit(&y, &bls, &BoostConfig::new(0.1, m).unwrap()).unwrap();
        // Oracle: track the two inner products directly.
        let (mut a1, mut a2) = (3.0f64, 1.0f64);
        let mut expect = Vec::new();
        for _ in 0..m {
            if a1.abs() >= a2.abs() {
                expect.push(0);
                a1 *= 0.9;
            } else {
                expect.push(1);
                a2 *= 0.9;
            }
        }
        assert_eq!(fit.path, expect);
        assert_eq!(&fit.path[..12], &[0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn duplicate_learner_lower_id_wins() {
        let x = centered(vec![1.0, 2.0, -1.0, 0.5]);
        let y = centered(vec![2.0, 1.0, 0.0, -1.0]);
        let bls = vec![BaseLearner::linear(0, "a", &x).unwrap(), BaseLearner::linear(1, "b", &x).unwrap()];
        let fit = boost_fit(&y, &bls, &BoostConfig::new(0.1, 10).unwrap()).unwrap();
        assert!(fit.path.iter().all(|&j| j == 0));
    }

    #[test]
    fn monotone_loss_and_aggregation() {
        let (bls, x) = random_learners(30, 6, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = centered((0..30).map(|i| x[(i, 0)] * 2.0 + rng.gen_range(-1.0..1.0)).collect());
        let fit = boost_fit(&y, &bls, &BoostConfig::new(0.3, 60).unwrap()).unwrap();
        for w in fit.rss_path.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        let mut agg = DVector::zeros(30);
        for (j, c) in &fit.coefficients {
            agg += bls[*j].design() * c;
        }
        assert!((agg - &fit.fitted).amax() < 1e-8);
        assert_eq!(fit.selected_set(), fit.path.iter().copied().collect());
    }

    #[test]
    fn selection_set_examples() {
        assert_eq!(selection_set(&[2, 2, 5, 2]), BTreeSet::from([2, 5]));
        assert_eq!(selection_set(&[1]), BTreeSet::from([1]));
    }

    #[test]
    fn rejects_uncentered_and_empty() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = centered(vec![1.0, 0.0, 2.0]);
        let bls = vec![BaseLearner::linear(0, "x", &x).unwrap()];
        let cfg = BoostConfig::new(0.1, 3).unwrap();
        assert!(matches!(boost_fit(&y, &bls, &cfg), Err(Error::NotCentered(_))));
        assert!(boost_fit(&centered(vec![1.0, 2.0, 3.0]), &[], &cfg).is_err());
        assert!(BoostConfig::new(0.0, 3).is_err());
        assert!(BoostConfig::new(0.5, 0).is_err());
    }

    #[test]
    fn variance_modes() {
        let (bls, x) = random_learners(20, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = centered((0..20).map(|i| x[(i, 1)] + rng.gen_range(-1.0..1.0)).collect());
        let fit = boost_fit(&y, &bls, &BoostConfig::new(1.0, 3).unwrap()).unwrap();

        let r = estimate_sigma(&fit, &y, &bls, VarianceMode::Known(0.7)).unwrap();
        assert_eq!(r, 0.7);

        let resp = estimate_sigma(&fit, &y, &bls, VarianceMode::Response).unwrap();
        let m = linalg::mean(&y);
        let var: f64 = y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 19.0;
        assert!((resp - var).abs() < 1e-14);

        // OLS refit against direct normal equations on the selected columns.
        let sel: Vec<usize> = fit.selected_set().into_iter().collect();
        let xa = DMatrix::from_fn(20, sel.len(), |i, k| x[(i, sel[k])]);
        let beta = (xa.transpose() * &xa).try_inverse().unwrap() * xa.transpose() * &y;
        let rss = (&y - &xa * beta).norm_squared();
        let ols = estimate_sigma(&fit, &y, &bls, VarianceMode::OlsRefit).unwrap();
        assert!((ols - rss / (20 - sel.len()) as f64).abs() < 1e-10);
    }

    #[test]
    fn response_variance_value() {
        // Sample variance 2.5.
        let y = centered(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let x = centered(vec![1.0, 0.0, 2.0, 0.0, 1.0]);
        let bls = vec![BaseLearner::linear(0, "x", &x).unwrap()];
        let fit = boost_fit(&y, &bls, &BoostConfig::new(0.1, 1).unwrap()).unwrap();
        assert!((estimate_sigma(&fit, &y, &bls, VarianceMode::Response).unwrap() - 2.5).abs() < 1e-14);
    }

    #[test]
    fn perfect_fit_has_zero_variance() {
        let x = centered(vec![1.0, 2.0, 3.0]);
        let y = x.clone();
        let bls = vec![BaseLearner::linear(0, "x", &x).unwrap()];
        let fit = boost_fit(&y, &bls, &BoostConfig::new(1.0, 1).unwrap()).unwrap();
        assert_eq!(estimate_sigma(&fit, &y, &bls, VarianceMode::BoostResidual), Err(Error::ZeroVariance));
    }

    fn mixed_learners(n: usize, seed: u64) -> Vec<BaseLearner> {
        use crate::baselearner::{Smoothing, SplineConfig};
        let (mut ls, x) = random_learners(n, 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let cfg = SplineConfig::new(3, 5, 2).unwrap();
        ls.push(BaseLearner::spline(4, "s", &c, cfg, Smoothing::Df(4.0), false).unwrap());
        ls.push(BaseLearner::spline(5, "s:dev", &c, cfg, Smoothing::Lambda(10.0), true).unwrap());
        let g = x.columns(1, 2).into_owned();
        ls.push(BaseLearner::group(6, "g", g).unwrap());
        ls
    }

    fn response(n: usize, ls: &[BaseLearner], seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DVector::from_fn(n, |i, _| ls[0].design()[(i, 0)] + ls[4].design()[(i, 1)] + rng.gen_range(-1.0..1.0));
        centered(y.as_slice().to_vec()).as_slice().to_vec()
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn gram_path_matches_direct(seed in 0u64..10_000, m in 1usize..80) {
            let ls = mixed_learners(60, seed);
            let y = response(60, &ls, seed + 1);
            let cache = GramCache::new(&ls).unwrap();
            let direct = boost_path_unchecked(&y, &ls, 0.1, m, None);
            let cached = boost_path_unchecked(&y, &ls, 0.1, m, Some(&cache));
            proptest::prop_assert_eq!(direct, cached);
        }

        #[test]
        fn early_exit_agrees_with_full_path(seed in 0u64..10_000, m in 1usize..60, bits in 0u32..128) {
            let ls = mixed_learners(50, seed);
            let y = response(50, &ls, seed + 7);
            let (path, _) = boost_path_unchecked(&y, &ls, 0.1, m, None);
            let observed = selection_set(&path);
            let as_mask = |set: &BTreeSet<usize>| (0..ls.len()).map(|j| set.contains(&j)).collect::<Vec<_>>();
            let cache = GramCache::new(&ls);
            proptest::prop_assert!(selects_exactly(&y, &ls, 0.1, m, &as_mask(&observed), cache.as_ref()));
            let other: BTreeSet<usize> = (0..ls.len()).filter(|j| bits & (1 << j) != 0).collect();
            let expected = other == observed;
            proptest::prop_assert_eq!(selects_exactly(&y, &ls, 0.1, m, &as_mask(&other), None), expected);
            proptest::prop_assert_eq!(selects_exactly(&y, &ls, 0.1, m, &as_mask(&other), cache.as_ref()), expected);
        }
    }
}
