//! Affine description `{y : Γy ≥ 0}` of the event that boosting with
//! linear learners follows a given path with given signs, and the
//! truncated-Gaussian test that conditions on it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselearner::{BaseLearner, LearnerKind};
use crate::boosting::{self, BoostFit, GramCache};
use crate::error::{Error, Result};
use crate::inversion::{invert_increasing, InvertOptions};
use crate::normal::trunc_gauss_cdf;
use crate::sampler::Congruency;

/// Feasibility slack for membership checks, relative to `max(1, ‖y‖)`.
pub const MEMBERSHIP_SLACK: f64 = 1e-8;

/// Largest Γ (rows × n) that [`build_gamma`] will materialize.
pub const MATERIALIZE_LIMIT: usize = 10_000_000;

#[derive(Debug, Clone)]
pub struct PathCertificate {
    pub path: Vec<usize>,
    pub signs: Vec<i8>,
    pub nu: f64,
    /// `X_j / ‖X_j‖` for every learner.
    units: Vec<DVector<f64>>,
}

impl PathCertificate {
    pub fn new(path: Vec<usize>, signs: Vec<i8>, nu: f64, learners: &[BaseLearner]) -> Result<Self> {
        if path.len() != signs.len() || path.is_empty() {
            return Err(Error::InvalidInput("path and signs must be non-empty and equally long".into()));
        }
        if signs.iter().any(|s| *s != 1 && *s != -1) {
            return Err(Error::InvalidInput("signs must be ±1".into()));
        }
        let mut units = Vec::with_capacity(learners.len());
        for bl in learners {
            if bl.kind() != LearnerKind::Linear || bl.p() != 1 || bl.lambda() != 0.0 {
                return Err(Error::Unsupported(format!(
                    "polyhedral conditioning needs unpenalized linear learners; learner {} is {:?}",
                    bl.id(),
                    bl.kind()
                )));
            }
            let x: DVector<f64> = bl.design().column(0).into();
            let norm = x.norm();
            units.push(x / norm);
        }
        if path.iter().any(|&j| j >= learners.len()) {
            return Err(Error::InvalidInput("path refers to an unknown learner".into()));
        }
        Ok(Self { path, signs, nu, units })
    }

    pub fn from_fit(fit: &BoostFit, nu: f64, learners: &[BaseLearner]) -> Result<Self> {
        let signs = fit
            .signs
            .iter()
            .map(|s| s.ok_or_else(|| Error::Unsupported("multi-column learner on the path".into())))
            .collect::<Result<Vec<i8>>>()?;
        Self::new(fit.path.clone(), signs, nu, learners)
    }

    pub fn m_stop(&self) -> usize {
        self.path.len()
    }

    pub fn num_learners(&self) -> usize {
        self.units.len()
    }

    pub fn n(&self) -> usize {
        self.units[0].len()
    }

    pub fn num_rows(&self) -> usize {
        2 * (self.num_learners() - 1) * self.m_stop()
    }

    /// `u ← (I − ν H_j) u` for the linear learner `j`.
    fn shrink_step(&self, j: usize, u: &mut DVector<f64>) {
        let x = &self.units[j];
        let a = self.nu * x.dot(u);
        u.axpy(-a, x, 1.0);
    }

    /// Visit the row pairs of step `m` (1-based), given `u = Υ^(m) w` for
    /// some vector `w`: calls `visit(competitor, plus, minus)` with the two
    /// row values applied to `w`.
    fn step_rows(&self, m: usize, u: &DVector<f64>, mut visit: impl FnMut(usize, f64, f64)) {
        let j_star = self.path[m - 1];
        let s = self.signs[m - 1] as f64;
        let lead = s * self.units[j_star].dot(u);
        for j in 0..self.num_learners() {
            if j == j_star {
                continue;
            }
            let other = self.units[j].dot(u);
            visit(j, lead + other, lead - other);
        }
    }
}

/// `Υ^(m) = Π_{l=1}^{m-1} (I − ν H_{j^(m−l)})`, built by the recursion
/// `Υ^(1) = I`, `Υ^(k+1) = (I − ν H_{j^(k)}) Υ^(k)`.
pub fn upsilon(m: usize, cert: &PathCertificate) -> Result<DMatrix<f64>> {
    if m < 1 || m > cert.m_stop() + 1 {
        return Err(Error::InvalidInput(format!("m must lie in 1..={}", cert.m_stop() + 1)));
    }
    let n = cert.n();
    let mut ups = DMatrix::<f64>::identity(n, n);
    for k in 1..m {
        let x = &cert.units[cert.path[k - 1]];
        // (I − ν x xᵀ) Υ = Υ − ν x (xᵀ Υ)
        let xt_u = x.transpose() * &ups;
        ups -= (x * xt_u) * cert.nu;
    }
    Ok(ups)
}

#[derive(Debug, Clone)]
pub struct Polyhedron {
    pub gamma: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl Polyhedron {
    pub fn contains(&self, y: &DVector<f64>) -> bool {
        let slack = MEMBERSHIP_SLACK * y.norm().max(1.0);
        let g = &self.gamma * y - &self.offset;
        g.iter().all(|&v| v >= -slack)
    }

    pub fn num_rows(&self) -> usize {
        self.gamma.nrows()
    }
}

/// Materialize Γ. Rows: steps outer, competitors ascending inner, the "+"
/// row before the "−" row.
pub fn build_gamma(cert: &PathCertificate) -> Result<Polyhedron> {
    let n = cert.n();
    let rows = cert.num_rows();
    if rows.saturating_mul(n) > MATERIALIZE_LIMIT {
        return Err(Error::InvalidInput(format!(
            "Γ would have {rows} x {n} entries; use the streaming truncation limits"
        )));
    }
    let p = cert.num_learners();
    let mut gamma = DMatrix::zeros(rows, n);
    let mut ups = DMatrix::<f64>::identity(n, n);
    let mut r = 0;
    for m in 1..=cert.m_stop() {
        let j_star = cert.path[m - 1];
        let s = cert.signs[m - 1] as f64;
        let lead = (cert.units[j_star].transpose() * &ups) * s;
        for j in 0..p {
            if j == j_star {
                continue;
            }
            let other = cert.units[j].transpose() * &ups;
            gamma.set_row(r, &(&lead + &other));
            gamma.set_row(r + 1, &(&lead - &other));
            r += 2;
        }
        let x = &cert.units[j_star];
        let xt_u = x.transpose() * &ups;
        ups -= (x * xt_u) * cert.nu;
    }
    Ok(Polyhedron { gamma, offset: DVector::zeros(rows) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationInterval {
    pub lo: f64,
    pub up: f64,
}

#[derive(Default)]
struct LimitAcc {
    lo: f64,
    up: f64,
    infeasible: Option<usize>,
}

impl LimitAcc {
    fn new() -> Self {
        Self { lo: f64::NEG_INFINITY, up: f64::INFINITY, infeasible: None }
    }

    /// Row value `a R + b ≥ 0` along the line `z + c R`.
    fn push(&mut self, row: usize, a: f64, b: f64, a_scale: f64, slack: f64) {
        if a.abs() <= 1e-12 * a_scale {
            if b < -slack && self.infeasible.is_none() {
                self.infeasible = Some(row);
            }
        } else if a > 0.0 {
            self.lo = self.lo.max(-b / a);
        } else {
            self.up = self.up.min(-b / a);
        }
    }

    fn finish(self, r_obs: f64) -> Result<TruncationInterval> {
        if let Some(row) = self.infeasible {
            return Err(Error::Infeasible { row });
        }
        Ok(TruncationInterval { lo: self.lo.min(r_obs), up: self.up.max(r_obs) })
    }
}

fn split_line(v: &DVector<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, f64)> {
    let vv = v.norm_squared();
    if !(vv > 0.0) {
        return Err(Error::InvalidInput("test vector must be non-zero".into()));
    }
    if v.len() != y.len() {
        return Err(Error::InvalidInput("test vector and response differ in length".into()));
    }
    let c = v / vv;
    let r_obs = v.dot(y);
    let z = y - &c * r_obs;
    Ok((c, z, r_obs))
}

/// Truncation limits of `vᵀY` given `Γy ≥ 0` and `P⊥_v y`.
pub fn truncation_limits(poly: &Polyhedron, v: &DVector<f64>, y: &DVector<f64>) -> Result<TruncationInterval> {
    let (c, z, r_obs) = split_line(v, y)?;
    let gc = &poly.gamma * &c;
    let gz = &poly.gamma * &z - &poly.offset;
    let slack = MEMBERSHIP_SLACK * y.norm().max(1.0);
    let cn = c.norm();
    let mut acc = LimitAcc::new();
    for i in 0..poly.num_rows() {
        let scale = poly.gamma.row(i).norm() * cn;
        acc.push(i, gc[i], gz[i], scale, slack);
    }
    acc.finish(r_obs)
}

/// Same limits without materializing Γ: the residual recursion is replayed
/// on `c` and `z` and every row is reduced as it is generated.
pub fn truncation_limits_streaming(
    cert: &PathCertificate,
    v: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<TruncationInterval> {
    let (c, z, r_obs) = split_line(v, y)?;
    let slack = MEMBERSHIP_SLACK * y.norm().max(1.0);
    let mut uc = c;
    let mut uz = z;
    let mut acc = LimitAcc::new();
    let mut row = 0;
    let p = cert.num_learners();
    for m in 1..=cert.m_stop() {
        let scale = 2.0 * uc.norm();
        let mut a_vals = Vec::with_capacity(2 * (p - 1));
        cert.step_rows(m, &uc, |_, plus, minus| {
            a_vals.push(plus);
            a_vals.push(minus);
        });
        let mut k = 0;
        cert.step_rows(m, &uz, |_, plus, minus| {
            acc.push(row, a_vals[k], plus, scale, slack);
            acc.push(row + 1, a_vals[k + 1], minus, scale, slack);
            k += 2;
            row += 2;
        });
        let j = cert.path[m - 1];
        cert.shrink_step(j, &mut uc);
        cert.shrink_step(j, &mut uz);
    }
    acc.finish(r_obs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    Greater,
    Less,
    TwoSided,
}

/// Truncated-Gaussian selective p-value for `H0: vᵀμ = t`.
pub fn polyhedron_pvalue(
    interval: TruncationInterval,
    v: &DVector<f64>,
    sigma2: f64,
    y: &DVector<f64>,
    null_value: f64,
    alternative: Alternative,
) -> Result<f64> {
    let var = sigma2 * v.norm_squared();
    let f = trunc_gauss_cdf(v.dot(y), null_value, var, interval.lo, interval.up)?;
    Ok(match alternative {
        Alternative::Greater => 1.0 - f,
        Alternative::Less => f,
        Alternative::TwoSided => (2.0 * f.min(1.0 - f)).min(1.0),
    })
}

/// Equal-tailed `1 − α` interval for `vᵀμ` by inverting the truncated
/// Gaussian in its mean.
pub fn polyhedron_ci(
    interval: TruncationInterval,
    v: &DVector<f64>,
    sigma2: f64,
    y: &DVector<f64>,
    alpha: f64,
) -> Result<(f64, f64)> {
    let var = sigma2 * v.norm_squared();
    let r_obs = v.dot(y);
    let sd = var.sqrt();
    let surv = |rho: f64| Ok(1.0 - trunc_gauss_cdf(r_obs, rho, var, interval.lo, interval.up)?);
    let opts = InvertOptions { value_tol: 1e-6, ..Default::default() };
    let lo = invert_increasing(surv, r_obs, sd, alpha / 2.0, opts)?;
    let hi = invert_increasing(surv, r_obs, sd, 1.0 - alpha / 2.0, opts)?;
    Ok((lo, hi))
}

/// Congruency = boosting reproduces the reference path and signs exactly.
pub struct PathSignOracle<'a> {
    learners: &'a [BaseLearner],
    nu: f64,
    path: Vec<usize>,
    signs: Vec<Option<i8>>,
    gram: Option<GramCache>,
}

impl<'a> PathSignOracle<'a> {
    pub fn new(learners: &'a [BaseLearner], nu: f64, fit: &BoostFit) -> Self {
        let gram = GramCache::new(learners);
        Self { learners, nu, path: fit.path.clone(), signs: fit.signs.clone(), gram }
    }
}

impl Congruency for PathSignOracle<'_> {
    fn is_congruent(&self, y: &DVector<f64>) -> Result<bool> {
        let (path, signs) =
            boosting::boost_path_unchecked(y.as_slice(), self.learners, self.nu, self.path.len(), self.gram.as_ref());
        Ok(path == self.path && signs == self.signs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boosting::{boost_fit, BoostConfig};
    use crate::linalg;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn instance(n: usize, p: usize, seed: u64) -> (Vec<BaseLearner>, DVector<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = linalg::center_columns(&x, &linalg::column_means(&x));
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
        let y = y.add_scalar(-linalg::mean(&y));
        let ls = (0..p).map(|j| BaseLearner::linear(j, format!("x{j}"), &x.column(j).into()).unwrap()).collect();
        (ls, y, x)
    }

    #[test]
    fn upsilon_replays_residuals() {
        let (ls, y, _) = instance(10, 3, 4);
        let cfg = BoostConfig::new(0.1, 6).unwrap();
        let fit = boost_fit(&y, &ls, &cfg).unwrap();
        let cert = PathCertificate::from_fit(&fit, 0.1, &ls).unwrap();
        assert_eq!(upsilon(1, &cert).unwrap(), DMatrix::identity(10, 10));
        for m in 1..=7 {
            let u = upsilon(m, &cert).unwrap() * &y;
            let partial = boost_fit(&y, &ls, &BoostConfig::new(0.1, m.max(2) - 1).unwrap()).unwrap();
            let expect = if m == 1 { y.clone() } else { partial.residuals.clone() };
            assert!((u - expect).amax() < 1e-8, "m={m}");
        }
        assert!(upsilon(8, &cert).is_err());
    }

    #[test]
    fn full_step_single_learner_upsilon_is_residual_projector() {
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.5]);
        let ls = vec![BaseLearner::linear(0, "x", &x).unwrap()];
        let cert = PathCertificate::new(vec![0, 0, 0], vec![1, 1, 1], 1.0, &ls).unwrap();
        let h = ls[0].hat_matrix();
        let expect = DMatrix::identity(4, 4) - h;
        for m in 2..=4 {
            assert!((upsilon(m, &cert).unwrap() - &expect).amax() < 1e-12);
        }
    }

    #[test]
    fn gamma_shape_and_self_consistency() {
        let (ls, y, _) = instance(12, 4, 8);
        let fit = boost_fit(&y, &ls, &BoostConfig::new(0.1, 5).unwrap()).unwrap();
        let cert = PathCertificate::from_fit(&fit, 0.1, &ls).unwrap();
        let poly = build_gamma(&cert).unwrap();
        assert_eq!(poly.num_rows(), 2 * 3 * 5);
        assert!((&poly.gamma * &y).iter().all(|&g| g >= -1e-8));
        assert!(poly.contains(&y));
    }

    #[test]
    fn sign_flip_symmetry() {
        let (ls, y, _) = instance(8, 2, 1);
        let cfg = BoostConfig::new(0.1, 1).unwrap();
        let fit = boost_fit(&y, &ls, &cfg).unwrap();
        let ny = -&y;
        let nfit = boost_fit(&ny, &ls, &cfg).unwrap();
        assert_eq!(nfit.path, fit.path);
        assert_eq!(nfit.signs[0], fit.signs[0].map(|s| -s));
        let g = build_gamma(&PathCertificate::from_fit(&fit, 0.1, &ls).unwrap()).unwrap();
        let ng = build_gamma(&PathCertificate::from_fit(&nfit, 0.1, &ls).unwrap()).unwrap();
        assert_eq!(g.num_rows(), 2);
        // the "+" and "−" rows swap and change sign
        assert!((ng.gamma.row(0) + g.gamma.row(1)).amax() < 1e-14);
        assert!((ng.gamma.row(1) + g.gamma.row(0)).amax() < 1e-14);
        assert!(ng.contains(&ny));
    }

    #[test]
    fn streaming_matches_materialized() {
        for seed in 0..5 {
            let (ls, y, x) = instance(15, 5, 100 + seed);
            let fit = boost_fit(&y, &ls, &BoostConfig::new(0.1, 12).unwrap()).unwrap();
            let cert = PathCertificate::from_fit(&fit, 0.1, &ls).unwrap();
            let poly = build_gamma(&cert).unwrap();
            let v: DVector<f64> = x.column(fit.path[0]).into();
            let a = truncation_limits(&poly, &v, &y).unwrap();
            let b = truncation_limits_streaming(&cert, &v, &y).unwrap();
            assert!(a.lo <= v.dot(&y) && v.dot(&y) <= a.up);
            for (p, q) in [(a.lo, b.lo), (a.up, b.up)] {
                assert!(p == q || (p - q).abs() < 1e-9 * (1.0 + p.abs()), "{p} vs {q}");
            }
        }
    }

    #[test]
    fn single_row_in_test_direction_gives_half_line() {
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let row = v.transpose() / v.norm_squared();
        let poly = Polyhedron { gamma: DMatrix::from_rows(&[row]), offset: DVector::zeros(1) };
        let y = DVector::from_vec(vec![0.5, 0.5, 0.5]);
        let t = truncation_limits(&poly, &v, &y).unwrap();
        assert!(t.lo.abs() < 1e-15 && t.up == f64::INFINITY);
    }

    #[test]
    fn orthogonal_row_contributes_nothing() {
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let poly = Polyhedron { gamma: DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]), offset: DVector::zeros(1) };
        let y = DVector::from_vec(vec![0.3, 2.0, 0.0]);
        let t = truncation_limits(&poly, &v, &y).unwrap();
        assert_eq!((t.lo, t.up), (f64::NEG_INFINITY, f64::INFINITY));
        let bad = DVector::from_vec(vec![0.3, -2.0, 0.0]);
        assert!(matches!(truncation_limits(&poly, &v, &bad), Err(Error::Infeasible { row: 0 })));
    }

    #[test]
    fn pvalue_edge_cases() {
        let v = DVector::from_vec(vec![1.0, 0.0]);
        let y = DVector::from_vec(vec![0.7, 0.0]);
        let free = TruncationInterval { lo: f64::NEG_INFINITY, up: f64::INFINITY };
        let p = polyhedron_pvalue(free, &v, 1.0, &y, 0.7, Alternative::TwoSided).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        let at_lo = TruncationInterval { lo: 0.7, up: 3.0 };
        let p = polyhedron_pvalue(at_lo, &v, 1.0, &y, 0.0, Alternative::Greater).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn pvalue_is_scale_invariant() {
        let (ls, y, x) = instance(10, 3, 12);
        let fit = boost_fit(&y, &ls, &BoostConfig::new(0.1, 5).unwrap()).unwrap();
        let cert = PathCertificate::from_fit(&fit, 0.1, &ls).unwrap();
        let v: DVector<f64> = x.column(fit.path[0]).into();
        let v2 = &v * 2.0;
        let i1 = truncation_limits_streaming(&cert, &v, &y).unwrap();
        let i2 = truncation_limits_streaming(&cert, &v2, &y).unwrap();
        let p1 = polyhedron_pvalue(i1, &v, 1.3, &y, 0.0, Alternative::TwoSided).unwrap();
        let p2 = polyhedron_pvalue(i2, &v2, 1.3, &y, 0.0, Alternative::TwoSided).unwrap();
        assert!((p1 - p2).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&p1));
    }

    #[test]
    fn untruncated_ci_is_classical() {
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let y = DVector::from_vec(vec![0.4, 0.2]);
        let free = TruncationInterval { lo: f64::NEG_INFINITY, up: f64::INFINITY };
        let (lo, hi) = polyhedron_ci(free, &v, 1.0, &y, 0.05).unwrap();
        let half = 1.959_963_985 * 2f64.sqrt();
        assert!((lo - (0.6 - half)).abs() < 1e-4 && (hi - (0.6 + half)).abs() < 1e-4);
    }
}
