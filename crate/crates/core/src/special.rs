//! Student-t distribution functions with real-valued degrees of freedom.

use statrs::function::beta::beta_reg;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::quad::integrate_lower_tail;

pub fn t_ln_pdf(x: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln()
        - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

pub fn t_pdf(x: f64, nu: f64) -> f64 {
    t_ln_pdf(x, nu).exp()
}

pub fn t_cdf(x: f64, nu: f64) -> f64 {
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x * x));
    if x < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Inverse CDF by safeguarded Newton iteration on [`t_cdf`].
pub fn t_quantile(p: f64, nu: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    if p > 0.5 {
        return -t_quantile(1.0 - p, nu);
    }
    let mut lo = -1.0;
    while t_cdf(lo, nu) > p {
        lo *= 2.0;
        if lo < -1e300 {
            return f64::NEG_INFINITY;
        }
    }
    let mut hi = 0.0;
    let mut x = crate::stats::std_normal_quantile(p).unwrap_or(lo).clamp(lo, hi);
    for _ in 0..200 {
        let f = t_cdf(x, nu) - p;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let step = f / t_pdf(x, nu);
        let mut next = x - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
            return next;
        }
        x = next;
    }
    x
}

/// `∂/∂ν log t_ν(s)`.
fn d_ln_pdf_d_nu(s: f64, nu: f64, psi_term: f64) -> f64 {
    let r = s * s / nu;
    psi_term - 0.5 / nu - 0.5 * r.ln_1p() + 0.5 * (nu + 1.0) * s * s / (nu * (nu + s * s))
}

/// `∂T_ν(x)/∂ν`, the derivative of the t CDF in its degrees of freedom.
pub fn t_cdf_d_nu(x: f64, nu: f64) -> f64 {
    if x > 0.0 {
        return -t_cdf_d_nu(-x, nu);
    }
    let psi_term = 0.5 * (digamma(0.5 * (nu + 1.0)) - digamma(0.5 * nu));
    integrate_lower_tail(
        |s| t_pdf(s, nu) * d_ln_pdf_d_nu(s, nu, psi_term),
        x,
        x.abs().max(1.0),
    )
}
