//! Standard normal helpers with tail-stable logarithms, and the truncated
//! Gaussian distribution function.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln Φ(x)`, accurate far into the lower tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x > -30.0 {
        if x > 5.0 {
            // ln(1 - Q) with Q tiny
            return (-norm_cdf(-x)).ln_1p();
        }
        return norm_cdf(x).ln();
    }
    // Mills-ratio asymptotic series for the far lower tail.
    let z2 = x * x;
    let inv = 1.0 / z2;
    let series = 1.0 - inv + 3.0 * inv * inv - 15.0 * inv * inv * inv + 105.0 * inv.powi(4);
    -0.5 * z2 - (-x).ln() - LN_SQRT_2PI + series.ln()
}

/// `ln(1 - e^x)` for `x <= 0`.
pub fn log1m_exp(x: f64) -> f64 {
    if x > 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln Σ exp(x_i)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn norm_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / var - 0.5 * var.ln() - LN_SQRT_2PI
}

/// Log density of `sigma * chi_w` at `r`.
pub fn scaled_chi_log_pdf(r: f64, w: usize, sigma: f64) -> f64 {
    if r < 0.0 {
        return f64::NEG_INFINITY;
    }
    let k = w as f64;
    let z = r / sigma;
    let log_z = if z == 0.0 {
        if w == 1 {
            0.0
        } else {
            return f64::NEG_INFINITY;
        }
    } else {
        z.ln()
    };
    (k - 1.0) * log_z - 0.5 * z * z - (0.5 * k - 1.0) * std::f64::consts::LN_2 - ln_gamma(0.5 * k) - sigma.ln()
}

/// Distribution function of `N(mu, var)` truncated to `[lo, up]`, evaluated
/// at `x` (clamped into the interval).
pub fn trunc_gauss_cdf(x: f64, mu: f64, var: f64, lo: f64, up: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(Error::InvalidInput("variance must be positive".into()));
    }
    if !(lo < up) {
        return Err(Error::InvalidInput(format!("empty truncation interval [{lo}, {up}]")));
    }
    let x = x.clamp(lo, up);
    if x == lo {
        return Ok(0.0);
    }
    if x == up {
        return Ok(1.0);
    }
    let sd = var.sqrt();
    let a = (lo - mu) / sd;
    let b = (up - mu) / sd;
    let z = (x - mu) / sd;

    if a >= 0.0 {
        // Upper tail: F = (Q(a) - Q(z)) / (Q(a) - Q(b)), Q(t) = Φ(-t).
        let lqa = log_norm_cdf(-a);
        let lqz = log_norm_cdf(-z);
        let lqb = log_norm_cdf(-b);
        let num = lqa + log1m_exp(lqz - lqa);
        let den = lqa + log1m_exp(lqb - lqa);
        return finish(num, den);
    }
    if b <= 0.0 {
        let lpa = log_norm_cdf(a);
        let lpz = log_norm_cdf(z);
        let lpb = log_norm_cdf(b);
        let num = lpz + log1m_exp(lpa - lpz);
        let den = lpb + log1m_exp(lpa - lpb);
        return finish(num, den);
    }
    // a < 0 < b: both distribution values are bounded away from the tails
    // on at least one side, so plain differences are safe.
    let den = norm_cdf(b) - norm_cdf(a);
    if !(den > 0.0) {
        return Err(Error::DegenerateTruncation);
    }
    Ok(((norm_cdf(z) - norm_cdf(a)) / den).clamp(0.0, 1.0))
}

fn finish(num: f64, den: f64) -> Result<f64> {
    if den == f64::NEG_INFINITY || den.is_nan() {
        return Err(Error::DegenerateTruncation);
    }
    if num == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    Ok((num - den).exp().clamp(0.0, 1.0))
}
