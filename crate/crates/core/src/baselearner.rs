//! Base-learners: linear, grouped and penalized B-spline components fitted
//! by (penalized) least squares.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Linear,
    Group,
    Spline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplineConfig {
    pub degree: usize,
    pub num_interior_knots: usize,
    pub diff_order: usize,
}

impl SplineConfig {
    pub fn new(degree: usize, num_interior_knots: usize, diff_order: usize) -> Result<Self> {
        let cfg = Self { degree, num_interior_knots, diff_order };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Number of basis functions.
    pub fn dim(&self) -> usize {
        self.num_interior_knots + self.degree + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_interior_knots < 1 || self.diff_order < 1 {
            return Err(Error::InvalidInput("spline needs >= 1 interior knot and diff order >= 1".into()));
        }
        if self.dim() <= self.diff_order {
            return Err(Error::InvalidInput(format!(
                "basis dimension {} must exceed difference order {}",
                self.dim(),
                self.diff_order
            )));
        }
        Ok(())
    }
}

/// B-spline basis on equidistant knots over `[lo, hi]`. The knot vector is
/// extended by `degree` equally spaced knots beyond each boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    degree: usize,
    lo: f64,
    hi: f64,
}

impl BSplineBasis {
    pub fn new(lo: f64, hi: f64, cfg: &SplineConfig) -> Result<Self> {
        cfg.validate()?;
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidInput("non-finite covariate range".into()));
        }
        if !(hi > lo) {
            return Err(Error::DegenerateCovariate);
        }
        let deg = cfg.degree;
        let k = cfg.num_interior_knots;
        let dx = (hi - lo) / (k + 1) as f64;
        let count = k + 2 + 2 * deg;
        let knots = (0..count).map(|i| lo + (i as f64 - deg as f64) * dx).collect();
        Ok(Self { knots, degree: deg, lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Basis row `(B_1(x), ..., B_M(x))`.
    pub fn eval_row(&self, x: f64) -> Result<Vec<f64>> {
        let slack = 1e-12 * (self.hi - self.lo);
        if !x.is_finite() || x < self.lo - slack || x > self.hi + slack {
            return Err(Error::OutsideSupport { value: x, lo: self.lo, hi: self.hi });
        }
        let x = x.clamp(self.lo, self.hi);
        let p = self.degree;
        let t = &self.knots;
        let first = p;
        let last = self.dim() - 1;
        // Span index k with t[k] <= x < t[k+1]; the right boundary joins the last span.
        let mut k = first;
        while k < last && x >= t[k + 1] {
            k += 1;
        }
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[k + 1 - j];
            right[j] = t[k + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let mut row = vec![0.0; self.dim()];
        for (r, v) in n.into_iter().enumerate() {
            row[k - p + r] = v;
        }
        Ok(row)
    }

    pub fn design(&self, c: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.dim();
        let mut out = DMatrix::zeros(c.len(), m);
        for (i, &x) in c.iter().enumerate() {
            let row = self.eval_row(x)?;
            for j in 0..m {
                out[(i, j)] = row[j];
            }
        }
        Ok(out)
    }
}

/// `n × M` B-spline design for covariate `c` with knots spread over its range.
pub fn build_pspline_basis(c: &[f64], cfg: &SplineConfig) -> Result<DMatrix<f64>> {
    if c.is_empty() || c.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("covariate must be non-empty and finite".into()));
    }
    let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    BSplineBasis::new(lo, hi, cfg)?.design(c)
}

/// `ΔᵀΔ` for the `order`-th difference operator on `m` coefficients.
pub fn build_difference_penalty(m: usize, order: usize) -> Result<DMatrix<f64>> {
    if order < 1 || m <= order {
        return Err(Error::InvalidInput(format!("need m > order >= 1, got m={m}, order={order}")));
    }
    let mut delta = DMatrix::<f64>::identity(m, m);
    for _ in 0..order {
        let r = delta.nrows();
        let mut next = DMatrix::zeros(r - 1, m);
        for i in 0..r - 1 {
            let row = delta.row(i + 1) - delta.row(i);
            next.set_row(i, &row);
        }
        delta = next;
    }
    Ok(delta.transpose() * delta)
}

/// Maps a covariate value to the learner's (centered, constrained) design row.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineTerm {
    pub basis: BSplineBasis,
    pub config: SplineConfig,
    /// `M × q` reparametrization removing the unidentifiable directions.
    pub constraint: DMatrix<f64>,
    /// Intercept of each constrained column on the covariate (or its mean).
    pub offsets: DVector<f64>,
    /// Linear slope removed from each column when the term is a deviation
    /// from a separate linear effect.
    pub slopes: Option<DVector<f64>>,
}

impl SplineTerm {
    pub fn dim(&self) -> usize {
        self.constraint.ncols()
    }

    pub fn eval_row(&self, x: f64) -> Result<DVector<f64>> {
        let raw = DVector::from_vec(self.basis.eval_row(x)?);
        let mut row = self.constraint.transpose() * raw - &self.offsets;
        if let Some(s) = &self.slopes {
            row -= s * x;
        }
        Ok(row)
    }

    pub fn raw_row(&self, x: f64) -> Result<Vec<f64>> {
        self.basis.eval_row(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    Lambda(f64),
    /// Target effective degrees of freedom `trace(H)`.
    Df(f64),
}

#[derive(Debug, Clone)]
pub struct LearnerFit {
    pub coef: DVector<f64>,
    pub fitted: DVector<f64>,
    pub sse: f64,
}

/// One additive component `X_j β_j` with quadratic penalty `λ_j β_jᵀ D_j β_j`.
#[derive(Debug)]
pub struct BaseLearner {
    id: usize,
    name: String,
    kind: LearnerKind,
    design: DMatrix<f64>,
    penalty: DMatrix<f64>,
    lambda: f64,
    gram: DMatrix<f64>,
    normal_inv: DMatrix<f64>,
    spline: Option<SplineTerm>,
    hat: OnceLock<DMatrix<f64>>,
}

impl Clone for BaseLearner {
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            name: self.name.clone(),
            kind: self.kind,
            design: self.design.clone(),
            penalty: self.penalty.clone(),
            lambda: self.lambda,
            gram: self.gram.clone(),
            normal_inv: self.normal_inv.clone(),
            spline: self.spline.clone(),
            hat: OnceLock::new(),
        }
    }
}

impl BaseLearner {
    pub fn new(
        id: usize,
        name: impl Into<String>,
        kind: LearnerKind,
        design: DMatrix<f64>,
        penalty: DMatrix<f64>,
        lambda: f64,
    ) -> Result<Self> {
        let p = design.ncols();
        if p == 0 || design.nrows() == 0 {
            return Err(Error::InvalidInput(format!("learner {id}: empty design")));
        }
        if design.iter().any(|v| !v.is_finite()) || penalty.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("learner {id}: non-finite entries")));
        }
        if penalty.nrows() != p || penalty.ncols() != p {
            return Err(Error::InvalidInput(format!("learner {id}: penalty must be {p} x {p}")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!("learner {id}: smoothing parameter must be >= 0")));
        }
        if kind == LearnerKind::Linear && (p != 1 || penalty.amax() != 0.0) {
            return Err(Error::InvalidInput(format!("learner {id}: linear learners have one column and no penalty")));
        }
        let scale = penalty.amax().max(1.0);
        if (&penalty - penalty.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidInput(format!("learner {id}: penalty not symmetric")));
        }
        if p > 1 && penalty.amax() > 0.0 {
            let min_eig = penalty.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-10 * scale {
                return Err(Error::InvalidInput(format!("learner {id}: penalty not positive semi-definite")));
            }
        }
        let gram = design.transpose() * &design;
        let normal = &gram + &penalty * lambda;
        let normal_inv = SpdFactor::new(&normal)
            .map_err(|e| match e {
                Error::Singular { pivot } => Error::SingularLearner { learner: id, pivot },
                other => other,
            })?
            .inverse();
        Ok(Self {
            id,
            name: name.into(),
            kind,
            design,
            penalty,
            lambda,
            gram,
            normal_inv,
            spline: None,
            hat: OnceLock::new(),
        })
    }

    pub fn linear(id: usize, name: impl Into<String>, x: &DVector<f64>) -> Result<Self> {
        let design = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        Self::new(id, name, LearnerKind::Linear, design, DMatrix::zeros(1, 1), 0.0)
    }

    pub fn group(id: usize, name: impl Into<String>, x: DMatrix<f64>) -> Result<Self> {
        let p = x.ncols();
        Self::new(id, name, LearnerKind::Group, x, DMatrix::zeros(p, p), 0.0)
    }

    /// P-spline learner on covariate `c`. The basis is centered and
    /// reparametrized to drop the constant direction; with `deviation = true`
    /// the whole penalty null space is removed and the columns are made
    /// orthogonal to `[1, c]`, so the term models departures from a linear
    /// effect fitted by a separate learner.
    pub fn spline(
        id: usize,
        name: impl Into<String>,
        c: &[f64],
        cfg: SplineConfig,
        smoothing: Smoothing,
        deviation: bool,
    ) -> Result<Self> {
        let n = c.len();
        if n < 2 {
            return Err(Error::InvalidInput("spline covariate needs at least two values".into()));
        }
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let basis = BSplineBasis::new(lo, hi, &cfg)?;
        let raw = basis.design(c)?;
        let m = basis.dim();
        let dpen = build_difference_penalty(m, cfg.diff_order)?;

        let null = if deviation {
            if cfg.diff_order < 2 || cfg.degree < 1 {
                return Err(Error::InvalidInput("deviation splines need degree >= 1 and diff order >= 2".into()));
            }
            // Polynomials of degree < diff_order in the coefficient index.
            let mut c0 = DMatrix::zeros(m, cfg.diff_order);
            for i in 0..m {
                for d in 0..cfg.diff_order {
                    c0[(i, d)] = (i as f64).powi(d as i32);
                }
            }
            c0
        } else {
            DMatrix::from_element(m, 1, 1.0)
        };
        let q = linalg::orthogonal_complement(&null);
        let bq = &raw * &q;
        let k = q.ncols();

        let (design, offsets, slopes) = if deviation {
            let xm = c.iter().sum::<f64>() / n as f64;
            let xc: Vec<f64> = c.iter().map(|v| v - xm).collect();
            let sxx: f64 = xc.iter().map(|v| v * v).sum();
            let means = linalg::column_means(&bq);
            let mut slopes = DVector::zeros(k);
            let mut design = linalg::center_columns(&bq, &means);
            for j in 0..k {
                let s: f64 = (0..n).map(|i| xc[i] * design[(i, j)]).sum::<f64>() / sxx;
                slopes[j] = s;
                for i in 0..n {
                    design[(i, j)] -= s * xc[i];
                }
            }
            // row(x) = BQ(x) - mean - s (x - xm) = BQ(x) - (mean - s xm) - s x
            let offsets = &means - &slopes * xm;
            (design, offsets, Some(slopes))
        } else {
            let means = linalg::column_means(&bq);
            (linalg::center_columns(&bq, &means), means, None)
        };
        let penalty = {
            let p = q.transpose() * &dpen * &q;
            (&p + p.transpose()) * 0.5
        };
        let lambda = match smoothing {
            Smoothing::Lambda(l) => l,
            Smoothing::Df(df) => lambda_for_df(&design, &penalty, df)?,
        };
        let mut bl = Self::new(id, name, LearnerKind::Spline, design, penalty, lambda)?;
        bl.spline = Some(SplineTerm { basis, config: cfg, constraint: q, offsets, slopes });
        Ok(bl)
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> LearnerKind {
        self.kind
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn spline_term(&self) -> Option<&SplineTerm> {
        self.spline.as_ref()
    }

    pub fn is_projector(&self) -> bool {
        self.lambda == 0.0 || self.penalty.amax() == 0.0
    }

    /// `(XᵀX + λD)⁻¹`.
    pub fn normal_inverse(&self) -> &DMatrix<f64> {
        &self.normal_inv
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `H = X (XᵀX + λD)⁻¹ Xᵀ`, computed on first use and cached.
    pub fn hat_matrix(&self) -> &DMatrix<f64> {
        self.hat.get_or_init(|| {
            let h = &self.design * &self.normal_inv * self.design.transpose();
            (&h + h.transpose()) * 0.5
        })
    }

    pub fn fit(&self, u: &DVector<f64>) -> Result<LearnerFit> {
        if u.len() != self.n() {
            return Err(Error::InvalidInput(format!(
                "learner {}: response length {} != {}",
                self.id,
                u.len(),
                self.n()
            )));
        }
        let coef = &self.normal_inv * (self.design.transpose() * u);
        let fitted = &self.design * &coef;
        let sse = (u - &fitted).norm_squared();
        Ok(LearnerFit { coef, fitted, sse })
    }

    /// `Xᵀu` into `xtu`.
    pub(crate) fn fill_xtu(&self, u: &[f64], xtu: &mut Vec<f64>) {
        let n = self.n();
        let x = self.design.as_slice();
        xtu.clear();
        for j in 0..self.p() {
            xtu.push(dot(&x[j * n..(j + 1) * n], u));
        }
    }

    /// Reduction `‖u‖² − ‖u − Hu‖²` achieved by the learner's fit to `u`,
    /// given `Xᵀu`, using the cached normal inverse. The coefficients are
    /// left in `coef`.
    pub(crate) fn gain_from_xtu(&self, xtu: &[f64], coef: &mut Vec<f64>) -> f64 {
        let p = self.p();
        coef.clear();
        let ninv = self.normal_inv.as_slice();
        for i in 0..p {
            let mut s = 0.0;
            for j in 0..p {
                s += ninv[j * p + i] * xtu[j];
            }
            coef.push(s);
        }
        let gc: f64 = xtu.iter().zip(coef.iter()).map(|(a, b)| a * b).sum();
        if self.is_projector() {
            gc
        } else {
            let g = self.gram.as_slice();
            let mut quad = 0.0;
            for i in 0..p {
                let mut s = 0.0;
                for j in 0..p {
                    s += g[j * p + i] * coef[j];
                }
                quad += coef[i] * s;
            }
            2.0 * gc - quad
        }
    }

    #[cfg(test)]
    pub(crate) fn score(&self, u: &[f64], u_sq: f64, xtu: &mut Vec<f64>, coef: &mut Vec<f64>) -> f64 {
        self.fill_xtu(u, xtu);
        u_sq - self.gain_from_xtu(xtu, coef)
    }

    /// `out += scale * X coef`.
    pub(crate) fn add_fitted(&self, coef: &[f64], scale: f64, out: &mut [f64]) {
        let n = self.n();
        let x = self.design.as_slice();
        for (j, &c) in coef.iter().enumerate() {
            let a = scale * c;
            if a == 0.0 {
                continue;
            }
            let col = &x[j * n..(j + 1) * n];
            for (o, &xv) in out.iter_mut().zip(col) {
                *o += a * xv;
            }
        }
    }

    /// Learner restricted to `train` rows, re-centered on the training
    /// means, together with the test-row design centered the same way.
    pub fn restrict(&self, train: &[usize], test: &[usize]) -> Result<(BaseLearner, DMatrix<f64>)> {
        let p = self.p();
        let mut xt = DMatrix::zeros(train.len(), p);
        for (r, &i) in train.iter().enumerate() {
            xt.set_row(r, &self.design.row(i));
        }
        let means = linalg::column_means(&xt);
        let xt = linalg::center_columns(&xt, &means);
        let mut xs = DMatrix::zeros(test.len(), p);
        for (r, &i) in test.iter().enumerate() {
            xs.set_row(r, &self.design.row(i));
        }
        let xs = linalg::center_columns(&xs, &means);
        let bl = BaseLearner::new(self.id, self.name.clone(), self.kind, xt, self.penalty.clone(), self.lambda)?;
        Ok((bl, xs))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Eigenvalues of `L⁻¹ D L⁻ᵀ` with `XᵀX = L Lᵀ`; the effective degrees of
/// freedom at `λ` are `Σ 1 / (1 + λ e_i)`.
fn demmler_reinsch(design: &DMatrix<f64>, penalty: &DMatrix<f64>) -> Result<DVector<f64>> {
    let g = design.transpose() * design;
    let l = SpdFactor::new(&g)?.lower().clone();
    let a = l.solve_lower_triangular(penalty).ok_or(Error::Singular { pivot: 0.0 })?;
    let b = l.solve_lower_triangular(&a.transpose()).ok_or(Error::Singular { pivot: 0.0 })?;
    let b = (&b + b.transpose()) * 0.5;
    Ok(b.symmetric_eigenvalues().map(|e| e.max(0.0)))
}

fn df_from_eigen(eig: &DVector<f64>, lambda: f64) -> f64 {
    eig.iter().map(|e| 1.0 / (1.0 + lambda * e)).sum()
}

/// Effective degrees of freedom `trace((XᵀX + λD)⁻¹ XᵀX)`.
pub fn effective_df(design: &DMatrix<f64>, penalty: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    Ok(df_from_eigen(&demmler_reinsch(design, penalty)?, lambda))
}

/// Smoothing parameter giving `trace(H) = df`, found by bisection on `log λ`.
pub fn lambda_for_df(design: &DMatrix<f64>, penalty: &DMatrix<f64>, df: f64) -> Result<f64> {
    let eig = demmler_reinsch(design, penalty)?;
    let (mut lo, mut hi) = (-10.0_f64, 14.0_f64);
    let df_lo = df_from_eigen(&eig, 10f64.powf(lo));
    let df_hi = df_from_eigen(&eig, 10f64.powf(hi));
    if !(df <= df_lo && df >= df_hi) {
        return Err(Error::InvalidInput(format!("target df {df} outside achievable range [{df_hi:.3}, {df_lo:.3}]")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if df_from_eigen(&eig, 10f64.powf(mid)) > df {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(10f64.powf(0.5 * (lo + hi)))
}
