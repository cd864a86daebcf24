//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot tolerance for symmetric positive-definite factorizations.
pub const PIVOT_TOL: f64 = 1e-10;

/// Cholesky factor `A = L Lᵀ` that refuses to continue once a pivot drops
/// below `PIVOT_TOL * max(diag(A))`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: DMatrix<f64>,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::InvalidInput("factorization needs a non-empty square matrix".into()));
        }
        let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0_f64, f64::max);
        let tol = PIVOT_TOL * scale.max(f64::MIN_POSITIVE);
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > tol) || !d.is_finite() {
                return Err(Error::Singular { pivot: d });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let l = &self.lower;
        let mut x = b.clone();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[(i, k)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::<f64>::zeros(n);
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
        }
        // symmetrize away rounding asymmetry
        let t = inv.transpose();
        (inv + t) * 0.5
    }
}

/// Orthonormal basis of the column space of `a`, dropping directions whose
/// singular value falls below `rel_tol * max singular value`.
pub fn orthonormal_basis(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if a.ncols() == 0 || a.nrows() == 0 {
        return DMatrix::zeros(a.nrows(), 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax <= 0.0 {
        return DMatrix::zeros(a.nrows(), 0);
    }
    let keep: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > rel_tol * smax).collect();
    let mut q = DMatrix::zeros(a.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        q.set_column(c, &u.column(i));
    }
    q
}

/// Numerical rank with the same relative cutoff as [`orthonormal_basis`].
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    orthonormal_basis(a, rel_tol).ncols()
}

/// Residual of `y` after projecting onto the column space of the
/// orthonormal matrix `q`.
pub fn residualize(q: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    if q.ncols() == 0 {
        return y.clone();
    }
    y - q * (q.transpose() * y)
}

/// Residualize every column of `a` on the orthonormal basis `q`.
pub fn residualize_columns(q: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    if q.ncols() == 0 {
        return a.clone();
    }
    a - q * (q.transpose() * a)
}

/// Orthonormal complement of the columns of `c` inside `R^m`.
pub fn orthogonal_complement(c: &DMatrix<f64>) -> DMatrix<f64> {
    let m = c.nrows();
    let qc = orthonormal_basis(c, 1e-10);
    let full = residualize_columns(&qc, &DMatrix::identity(m, m));
    orthonormal_basis(&full, 1e-8)
}

pub fn column_means(a: &DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows().max(1) as f64;
    DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.sum() / n))
}

pub fn center_columns(a: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

pub fn mean(y: &DVector<f64>) -> f64 {
    if y.is_empty() {
        0.0
    } else {
        y.sum() / y.len() as f64
    }
}

/// Horizontally stack matrices with a common row count.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let p: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, p);
    let mut off = 0;
    for b in blocks {
        out.columns_mut(off, b.ncols()).copy_from(*b);
        off += b.ncols();
    }
    out
}

/// Least-squares coefficients of `y` on the full-column-rank `x` via the
/// normal equations.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let f = SpdFactor::new(&(x.transpose() * x))?;
    Ok(f.solve(&(x.transpose() * y)))
}
