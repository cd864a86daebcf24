//! Stopping-iteration choice by k-fold cross-validation with a fixed fold
//! assignment, and the resulting deterministic selection map.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselearner::BaseLearner;
use crate::boosting::{self, check_inputs, BoostState, GramCache};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    /// Fold label in `1..=k` for every observation.
    pub folds: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.folds {
            s[f - 1] += 1;
        }
        s
    }
}

/// Seeded uniform shuffle of the balanced labels `(1,…,1,2,…,2,…,k,…,k)`;
/// when `k` does not divide `n` the lowest labels get one extra member.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::InvalidInput(format!("need 2 <= k <= n, got k={k}, n={n}")));
    }
    let base = n / k;
    let extra = n % k;
    let mut labels = Vec::with_capacity(n);
    for f in 1..=k {
        let size = base + usize::from(f <= extra);
        labels.extend(std::iter::repeat_n(f, size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels.shuffle(&mut rng);
    Ok(FoldAssignment { folds: labels, k, seed })
}

#[derive(Debug, Clone)]
struct FoldSplit {
    train: Vec<usize>,
    test: Vec<usize>,
    learners: Vec<BaseLearner>,
    test_designs: Vec<DMatrix<f64>>,
    gram: Option<GramCache>,
}

/// Per-fold learners, precomputed once so repeated CV runs on new responses
/// only pay for the boosting passes.
#[derive(Debug, Clone)]
pub struct CvPlan {
    folds: FoldAssignment,
    splits: Vec<FoldSplit>,
}

impl CvPlan {
    pub fn new(learners: &[BaseLearner], folds: FoldAssignment) -> Result<Self> {
        let n = folds.folds.len();
        if let Some(bl) = learners.iter().find(|bl| bl.n() != n) {
            return Err(Error::InvalidInput(format!("learner {} has {} rows, folds cover {n}", bl.id(), bl.n())));
        }
        let mut splits = Vec::with_capacity(folds.k);
        for f in 1..=folds.k {
            let train: Vec<usize> = (0..n).filter(|&i| folds.folds[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| folds.folds[i] == f).collect();
            let mut ls = Vec::with_capacity(learners.len());
            let mut ts = Vec::with_capacity(learners.len());
            for bl in learners {
                let (l, t) = bl.restrict(&train, &test)?;
                ls.push(l);
                ts.push(t);
            }
            let gram = GramCache::new(&ls);
            splits.push(FoldSplit { train, test, learners: ls, test_designs: ts, gram });
        }
        Ok(Self { folds, splits })
    }

    pub fn folds(&self) -> &FoldAssignment {
        &self.folds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Mean held-out squared error for m = 1..=grid_max (index m-1).
    pub risk: Vec<f64>,
    pub chosen_mstop: usize,
}

fn fold_risk(split: &FoldSplit, y: &[f64], grid_max: usize, nu: f64) -> Vec<f64> {
    let ytr: Vec<f64> = split.train.iter().map(|&i| y[i]).collect();
    let offset = ytr.iter().sum::<f64>() / ytr.len() as f64;
    let ytr: Vec<f64> = ytr.iter().map(|v| v - offset).collect();
    let yte: Vec<f64> = split.test.iter().map(|&i| y[i]).collect();
    let mut pred = vec![offset; yte.len()];
    let nt = yte.len();
    let mut state = BoostState::with_gram(&ytr, &split.learners, nu, split.gram.as_ref());
    let mut risk = Vec::with_capacity(grid_max);
    for _ in 0..grid_max {
        let step = state.step();
        let xs = split.test_designs[step.learner].as_slice();
        for (c, &b) in state.last_coef().iter().enumerate() {
            let a = nu * b;
            let col = &xs[c * nt..(c + 1) * nt];
            for (p, &x) in pred.iter_mut().zip(col) {
                *p += a * x;
            }
        }
        let mse = yte.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / nt as f64;
        risk.push(mse);
    }
    risk
}

/// Cross-validated risk over `1..=grid_max`; ties go to the smaller m.
pub fn cv_choose_mstop(y: &DVector<f64>, plan: &CvPlan, grid_max: usize, nu: f64) -> Result<CvResult> {
    if grid_max < 1 {
        return Err(Error::InvalidInput("grid_max must be >= 1".into()));
    }
    if y.len() != plan.folds.folds.len() {
        return Err(Error::InvalidInput("response length does not match fold assignment".into()));
    }
    Ok(cv_unchecked(y.as_slice(), plan, grid_max, nu))
}

fn cv_unchecked(y: &[f64], plan: &CvPlan, grid_max: usize, nu: f64) -> CvResult {
    let per_fold: Vec<Vec<f64>> = plan.splits.par_iter().map(|s| fold_risk(s, y, grid_max, nu)).collect();
    let k = per_fold.len() as f64;
    let risk: Vec<f64> = (0..grid_max).map(|m| per_fold.iter().map(|r| r[m]).sum::<f64>() / k).collect();
    let mut chosen = 0;
    for m in 1..grid_max {
        if risk[m] < risk[chosen] {
            chosen = m;
        }
    }
    CvResult { risk, chosen_mstop: chosen + 1 }
}

#[derive(Debug, Clone)]
pub enum Stopping {
    Fixed(usize),
    Cv { plan: CvPlan, grid_max: usize },
}

/// The deterministic selection map `y ↦ A`: CV (with fixed folds) or a
/// fixed stopping iteration, followed by boosting on the full data.
#[derive(Debug, Clone)]
pub struct Selector<'a> {
    learners: &'a [BaseLearner],
    nu: f64,
    stopping: Stopping,
    gram: Option<Arc<GramCache>>,
}

impl<'a> Selector<'a> {
    pub fn new(learners: &'a [BaseLearner], nu: f64, stopping: Stopping) -> Result<Self> {
        if learners.is_empty() {
            return Err(Error::InvalidInput("empty learner list".into()));
        }
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Error::InvalidInput(format!("step length {nu} not in (0, 1]")));
        }
        match &stopping {
            Stopping::Fixed(m) if *m < 1 => return Err(Error::InvalidInput("m_stop must be >= 1".into())),
            Stopping::Cv { grid_max, .. } if *grid_max < 1 => {
                return Err(Error::InvalidInput("grid_max must be >= 1".into()))
            }
            _ => {}
        }
        Ok(Self { learners, nu, stopping, gram: GramCache::new(learners).map(Arc::new) })
    }

    pub fn learners(&self) -> &'a [BaseLearner] {
        self.learners
    }

    pub fn step_length(&self) -> f64 {
        self.nu
    }

    pub fn stopping(&self) -> &Stopping {
        &self.stopping
    }

    pub fn choose_mstop(&self, y: &DVector<f64>) -> usize {
        match &self.stopping {
            Stopping::Fixed(m) => *m,
            Stopping::Cv { plan, grid_max } => cv_unchecked(y.as_slice(), plan, *grid_max, self.nu).chosen_mstop,
        }
    }

    /// Selected set and stopping iteration.
    pub fn select(&self, y: &DVector<f64>) -> Result<(BTreeSet<usize>, usize)> {
        check_inputs(y, self.learners)?;
        Ok(self.select_unchecked(y))
    }

    /// Congruency test against a reference set given as a membership mask.
    pub(crate) fn reproduces(&self, y: &DVector<f64>, mask: &[bool]) -> bool {
        let m = self.choose_mstop(y);
        boosting::selects_exactly(y.as_slice(), self.learners, self.nu, m, mask, self.gram.as_deref())
    }

    pub(crate) fn select_unchecked(&self, y: &DVector<f64>) -> (BTreeSet<usize>, usize) {
        let m = self.choose_mstop(y);
        let (path, _) = boosting::boost_path_unchecked(y.as_slice(), self.learners, self.nu, m, self.gram.as_deref());
        (boosting::selection_set(&path), m)
    }
}

/// CV (or fixed) stopping followed by boosting on all rows.
pub fn pipeline_select(
    y: &DVector<f64>,
    learners: &[BaseLearner],
    nu: f64,
    stopping: Stopping,
) -> Result<(BTreeSet<usize>, usize)> {
    Selector::new(learners, nu, stopping)?.select(y)
}
