//! Root finding for monotone increasing functions used by the confidence
//! interval inversions.

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct InvertOptions {
    /// Largest distance from the start point, in units of `scale`.
    pub max_multiple: f64,
    pub value_tol: f64,
    /// Width tolerance relative to `scale`.
    pub width_tol: f64,
    pub max_iter: usize,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self { max_multiple: 64.0, value_tol: 1e-3, width_tol: 1e-6, max_iter: 200 }
    }
}

/// Solve `f(x) = target` for nondecreasing `f`, expanding by doubling from
/// `center ± scale` up to `center ± max_multiple·scale`. A side that never
/// reaches the target returns `±inf`.
pub fn invert_increasing<F>(f: F, center: f64, scale: f64, target: f64, opts: InvertOptions) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let f0 = f(center)?;
    if (f0 - target).abs() < opts.value_tol * 1e-3 {
        return Ok(center);
    }
    let upward = f0 < target;
    let dir = if upward { 1.0 } else { -1.0 };
    let mut inner = center;
    let mut step = scale;
    let outer = loop {
        let x = center + dir * step;
        let fx = f(x)?;
        let crossed = if upward { fx >= target } else { fx <= target };
        if crossed {
            break x;
        }
        inner = x;
        if step >= opts.max_multiple * scale {
            return Ok(dir * f64::INFINITY);
        }
        step *= 2.0;
    };
    let (mut a, mut b) = if upward { (inner, outer) } else { (outer, inner) };
    for _ in 0..opts.max_iter {
        let mid = 0.5 * (a + b);
        let fm = f(mid)?;
        if (fm - target).abs() < opts.value_tol || (b - a) < opts.width_tol * scale {
            return Ok(mid);
        }
        if fm < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_root_of_logistic() {
        let f = |x: f64| Ok(1.0 / (1.0 + (-x).exp()));
        let opts = InvertOptions { value_tol: 1e-12, width_tol: 1e-13, ..Default::default() };
        let r = invert_increasing(f, 0.0, 1.0, 0.9, opts).unwrap();
        assert!((r - 9f64.ln()).abs() < 1e-8);
        let l = invert_increasing(f, 3.0, 1.0, 0.1, opts).unwrap();
        assert!((l + 9f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn flat_side_is_infinite() {
        let f = |x: f64| Ok(if x > 0.0 { 0.5 } else { 0.2 });
        let r = invert_increasing(f, 0.0, 1.0, 0.9, InvertOptions::default()).unwrap();
        assert_eq!(r, f64::INFINITY);
        let l = invert_increasing(f, 1.0, 1.0, 0.01, InvertOptions::default()).unwrap();
        assert_eq!(l, f64::NEG_INFINITY);
    }
}
