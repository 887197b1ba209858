use super::{Copula, Family, Params, EPS};
use crate::dual::Real;
use crate::error::{Error, Result};
use crate::quad::{integrate_gl, integrate_gl_panels, integrate_lower_tail};
use crate::special::{t_cdf, t_pdf, t_quantile};
use crate::stats::{std_normal_cdf, std_normal_pdf, std_normal_quantile};

fn unsupported(family: Family, op: &'static str, dim: usize) -> Error {
    Error::UnsupportedDim {
        family: family.name(),
        op,
        dim,
    }
}

/// Clamp to `[EPS, 1 − EPS]`; clamped coordinates carry no derivative.
fn clamp_unit<T: Real>(x: T) -> T {
    if x.re() < EPS {
        T::cst(EPS)
    } else if x.re() > 1.0 - EPS {
        T::cst(1.0 - EPS)
    } else {
        x
    }
}

fn gumbel2<T: Real>(a: T, u: T, v: T) -> T {
    let (lu, lv) = (u.ln(), v.ln());
    let (x, y) = (-lu, -lv);
    let g = x.powr(a) + y.powr(a);
    let inv_a = T::cst(1.0) / a;
    let g_inv = g.powr(inv_a);
    -lu - lv + (a - 1.0) * (x.ln() + y.ln()) - g_inv + (T::cst(1.0) - a) * inv_a * 2.0 * g.ln()
        + ((a - 1.0) / g_inv + 1.0).ln()
}

fn gumbel3<T: Real>(a: T, u: &[T]) -> T {
    let theta = T::cst(1.0) / a;
    let mut s = T::cst(0.0);
    let mut acc = T::cst(0.0);
    for &ui in u {
        let l = ui.ln();
        let x = -l;
        s = s + x.powr(a);
        acc = acc + (a - 1.0) * x.ln() - l;
    }
    let st = s.powr(theta);
    let poly = st * st + (a - 1.0) * st * 3.0 + (a - 1.0) * (a * 2.0 - 1.0);
    acc - st + (theta - 3.0) * s.ln() + poly.ln()
}

fn clayton2<T: Real>(a: T, u: T, v: T) -> T {
    let (lu, lv) = (u.ln(), v.ln());
    // u^{-α} = exp(−α ln u)
    let s = (-a * lu).exp() + (-a * lv).exp() - 1.0;
    (a + 1.0).ln() - (a + 1.0) * (lu + lv) - (T::cst(1.0) / a + 2.0) * s.ln()
}

fn frank2<T: Real>(a: T, u: T, v: T) -> T {
    let big_a = (-a).exp_m1();
    let b = (-a * u).exp_m1();
    let c = (-a * v).exp_m1();
    (-a * big_a).ln() - a * (u + v) - (big_a + b * c).abs().ln() * 2.0
}

fn gaussian_m<T: Real>(chol: &[T], u: &[T]) -> T {
    let m = u.len();
    let zeta: Vec<T> = u.iter().map(|&x| x.norm_quantile()).collect();
    let mut w: Vec<T> = Vec::with_capacity(m);
    let mut out = T::cst(0.0);
    for i in 0..m {
        let mut s = zeta[i];
        for (j, &wj) in w.iter().enumerate() {
            s = s - chol[i * m + j] * wj;
        }
        let lii = chol[i * m + i];
        let wi = s / lii;
        out = out - lii.ln() - (wi * wi - zeta[i] * zeta[i]) * 0.5;
        w.push(wi);
    }
    out
}

fn student_t2<T: Real>(rho: T, nu: T, u: T, v: T) -> T {
    let x1 = u.t_quantile(nu);
    let x2 = v.t_quantile(nu);
    let one_m = T::cst(1.0) - rho * rho;
    let q = x1 * x1 + x2 * x2 - rho * x1 * x2 * 2.0;
    let half = |t: T| t * 0.5;
    (half(nu + 2.0)).ln_gamma() + half(nu).ln_gamma() - half(nu + 1.0).ln_gamma() * 2.0 - half(one_m.ln())
        - half(nu + 2.0) * (q / (nu * one_m)).ln_1p()
        + half(nu + 1.0) * ((x1 * x1 / nu).ln_1p() + (x2 * x2 / nu).ln_1p())
}

/// Log-density for any [`Real`] scalar; `u` is clamped to `[EPS, 1 − EPS]`.
pub(crate) fn log_density_generic<T: Real>(c: &Copula<T>, u: &[T]) -> Result<T> {
    if u.len() != c.dim {
        return Err(Error::DimMismatch {
            expected: c.dim,
            got: u.len(),
        });
    }
    let family = c.family();
    let u: Vec<T> = u.iter().map(|&x| clamp_unit(x)).collect();
    let need2 = |op| if c.dim == 2 { Ok(()) } else { Err(unsupported(family, op, c.dim)) };
    let out = match &c.params {
        Params::Independence => T::cst(0.0),
        Params::Gumbel(a) => match c.dim {
            2 => gumbel2(*a, u[0], u[1]),
            3 => gumbel3(*a, &u),
            d => return Err(unsupported(family, "log_density", d)),
        },
        Params::Clayton(a) => {
            need2("log_density")?;
            clayton2(*a, u[0], u[1])
        }
        Params::Frank(a) => {
            need2("log_density")?;
            frank2(*a, u[0], u[1])
        }
        Params::Gaussian { chol } => gaussian_m(chol, &u),
        Params::StudentT { chol, nu } => {
            need2("log_density")?;
            student_t2(chol[2], *nu, u[0], u[1])
        }
    };
    if !out.re().is_finite() {
        return Err(Error::Boundary(family.name()));
    }
    Ok(out)
}

pub(crate) fn log_density(c: &Copula, u: &[f64]) -> Result<f64> {
    log_density_generic(c, u)
}

/// Closed-form bivariate Gumbel log-density.
pub fn gumbel_bivariate_log_density(alpha: f64, u: f64, v: f64) -> Result<f64> {
    Copula::gumbel(alpha, 2)?.log_density(&[u, v])
}

/// Closed-form trivariate Gumbel log-density.
pub fn trivariate_gumbel_log_density(alpha: f64, u: f64, v: f64, w: f64) -> Result<f64> {
    Copula::gumbel(alpha, 3)?.log_density(&[u, v, w])
}

/// Gaussian-copula log-density from a correlation Cholesky factor
/// (row-major `M×M`, lower triangular).
pub fn gaussian_copula_log_density_m(chol: &[f64], u: &[f64]) -> Result<f64> {
    let m = u.len();
    if m < 2 {
        return Err(Error::domain("gaussian_copula_log_density_m", "need at least 2 margins"));
    }
    if chol.len() != m * m {
        return Err(Error::DimMismatch {
            expected: m * m,
            got: chol.len(),
        });
    }
    for i in 0..m {
        if chol[i * m + i] <= 0.0 || ((i + 1)..m).any(|j| chol[i * m + j] != 0.0) {
            return Err(Error::NotPositiveDefinite(format!("row {i} is not a valid Cholesky row")));
        }
        let norm: f64 = (0..=i).map(|k| chol[i * m + k] * chol[i * m + k]).sum();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::NotPositiveDefinite(format!("row {i} has squared norm {norm}, not unit diagonal")));
        }
    }
    let c = Copula {
        dim: m,
        params: Params::Gaussian { chol: chol.to_vec() },
    };
    log_density(&c, u)
}

/// `P(W_k ≤ (b_k − Σ_{j<k} L_kj w_j)/L_kk for all k)` for iid standard
/// normal `W`, by nested Gauss–Legendre integration over `w_0 … w_{M−2}`.
fn mvn_cdf_chol(chol: &[f64], b: &[f64]) -> f64 {
    // quadrature range [−9, b] with a panel count fixed by the widest range
    // that clamped margins can produce, so the result is smooth in b
    const LOWER: f64 = -9.0;
    const UPPER_SPAN: f64 = 5.0;
    fn rec(k: usize, chol: &[f64], b: &[f64], w: &[f64]) -> f64 {
        let m = b.len();
        let mut s = b[k];
        for j in 0..k {
            s -= chol[k * m + j] * w[j];
        }
        let upper = s / chol[k * m + k];
        if k == m - 1 {
            return std_normal_cdf(upper);
        }
        if upper < LOWER {
            return 0.0;
        }
        let next = chol[(k + 1) * m + k + 1];
        let panels = ((UPPER_SPAN - LOWER) / (0.5 * next.min(1.0))).ceil() as usize;
        integrate_gl_panels(
            |x| {
                let mut wk = w.to_vec();
                wk[k] = x;
                std_normal_pdf(x) * rec(k + 1, chol, b, &wk)
            },
            LOWER,
            upper,
            panels,
        )
    }
    rec(0, chol, b, &vec![0.0; b.len()])
}

/// Bivariate normal copula CDF from the arcsine form
/// `C(u, v) = uv + (1/2π) ∫_0^{asin ρ} exp(−(x² + y² − 2xy sin θ) / (2 cos² θ)) dθ`.
fn gaussian_cdf2(rho: f64, u: f64, v: f64) -> Result<f64> {
    let (x, y) = (std_normal_quantile(u)?, std_normal_quantile(v)?);
    let top = rho.asin();
    let (lo, hi) = if top < 0.0 { (top, 0.0) } else { (0.0, top) };
    let sign = if top < 0.0 { -1.0 } else { 1.0 };
    let integral = integrate_gl_panels(
        |t| {
            let c = t.cos();
            (-(x * x + y * y - 2.0 * x * y * t.sin()) / (2.0 * c * c)).exp()
        },
        lo,
        hi,
        8,
    );
    Ok(u * v + sign * integral / (2.0 * std::f64::consts::PI))
}

fn student_t_cdf2(rho: f64, nu: f64, u: f64, v: f64) -> f64 {
    if u > 0.5 {
        // C(u, v) = v − P(X₁ > x₁, X₂ ≤ x₂), and (−X₁, X₂) has correlation −ρ
        return (v - student_t_cdf2(-rho, nu, 1.0 - u, v)).clamp(0.0, u.min(v));
    }
    let x1 = t_quantile(u, nu);
    let x2 = t_quantile(v, nu);
    let one_m = 1.0 - rho * rho;
    let p = integrate_lower_tail(
        |s| {
            let scale = ((nu + s * s) * one_m / (nu + 1.0)).sqrt();
            t_pdf(s, nu) * t_cdf((x2 - rho * s) / scale, nu + 1.0)
        },
        x1,
        x1.abs().max(1.0),
    );
    p.clamp(0.0, u.min(v))
}

pub(crate) fn cdf(c: &Copula, u: &[f64]) -> Result<f64> {
    if u.len() != c.dim {
        return Err(Error::DimMismatch {
            expected: c.dim,
            got: u.len(),
        });
    }
    let family = c.family();
    if matches!(family, Family::Clayton | Family::Frank | Family::StudentT) && c.dim != 2 {
        return Err(unsupported(family, "cdf", c.dim));
    }
    if u.iter().any(|x| x.is_nan()) {
        return Err(Error::domain("copula_cdf", "NaN argument"));
    }
    if u.iter().any(|&x| x <= 0.0) {
        return Ok(0.0);
    }
    // coordinates at 1 drop out: C(u, 1) = C(u)
    let active: Vec<usize> = (0..u.len()).filter(|&i| u[i] < 1.0).collect();
    match active.len() {
        0 => return Ok(1.0),
        1 => return Ok(u[active[0]]),
        _ => {}
    }
    let v = |i: usize| u[active[i]];
    let out = match &c.params {
        Params::Independence => active.iter().map(|&i| u[i]).product(),
        Params::Gumbel(a) => {
            let s: f64 = active.iter().map(|&i| (-u[i].ln()).powf(*a)).sum();
            (-s.powf(1.0 / a)).exp()
        }
        Params::Clayton(a) => (v(0).powf(-a) + v(1).powf(-a) - 1.0).powf(-1.0 / a),
        Params::Frank(a) => {
            let big_a = (-a).exp_m1();
            let b = (-a * v(0)).exp_m1();
            let cc = (-a * v(1)).exp_m1();
            -(b * cc / big_a).ln_1p() / a
        }
        Params::Gaussian { chol } if active.len() == 2 => {
            let m = c.dim;
            let (i, j) = (active[0], active[1]);
            let rho: f64 = (0..=i.min(j)).map(|k| chol[i * m + k] * chol[j * m + k]).sum();
            gaussian_cdf2(rho, u[i], u[j])?
        }
        Params::Gaussian { chol } => {
            let m = c.dim;
            // correlation of the active margins, refactored
            let full = Copula {
                dim: m,
                params: Params::Gaussian { chol: chol.clone() },
            }
            .correlation()
            .expect("elliptical");
            let k = active.len();
            let mut sub = vec![0.0; k * k];
            for (a, &i) in active.iter().enumerate() {
                for (b, &j) in active.iter().enumerate() {
                    sub[a * k + b] = full[i * m + j];
                }
            }
            let l = super::correlation_cholesky(&sub, k)?;
            let b: Vec<f64> = active.iter().map(|&i| std_normal_quantile(u[i])).collect::<Result<_>>()?;
            mvn_cdf_chol(&l, &b)
        }
        Params::StudentT { chol, nu } => student_t_cdf2(chol[2], *nu, v(0), v(1)),
    };
    if !out.is_finite() {
        return Err(Error::Boundary(family.name()));
    }
    Ok(out.clamp(0.0, 1.0))
}

/// Debye function `D₁(x) = (1/x) ∫_0^x t/(e^t − 1) dt`.
pub(crate) fn debye1(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let ax = x.abs();
    let integrand = |t: f64| if t == 0.0 { 1.0 } else { t / t.exp_m1() };
    let d = integrate_gl(integrand, 0.0, ax, 1.0) / ax;
    if x > 0.0 {
        d
    } else {
        // D₁(−x) = D₁(x) + x/2
        d + ax / 2.0
    }
}

pub(crate) fn dependence_measure(c: &Copula) -> Result<f64> {
    if c.dim != 2 {
        return Err(unsupported(c.family(), "dependence_measure", c.dim));
    }
    Ok(match &c.params {
        Params::Independence => 0.0,
        Params::Gumbel(a) => (a - 1.0) / a,
        Params::Clayton(a) => a / (a + 2.0),
        Params::Frank(a) => 1.0 - 4.0 / a * (1.0 - debye1(*a)),
        Params::Gaussian { chol } | Params::StudentT { chol, .. } => {
            std::f64::consts::FRAC_2_PI * chol[2].asin()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn cdf_examples() {
        let g1 = Copula::gumbel(1.0, 2).unwrap();
        assert!((g1.cdf(&[0.5, 0.5]).unwrap() - 0.25).abs() < 1e-15);
        let g2 = Copula::gumbel(2.0, 2).unwrap();
        assert!((g2.cdf(&[0.5, 0.5]).unwrap() - 2f64.powf(-2f64.sqrt())).abs() < 1e-15);
        assert!((g2.cdf(&[0.5, 0.5]).unwrap() - 0.375214).abs() < 1e-6);
        let c = Copula::clayton(1.0).unwrap();
        assert!((c.cdf(&[0.5, 0.5]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cdf_boundaries_are_exact() {
        let fams = [
            Copula::gumbel(2.0, 2).unwrap(),
            Copula::clayton(2.0).unwrap(),
            Copula::frank(4.0).unwrap(),
            Copula::gaussian(0.6).unwrap(),
            Copula::student_t(0.6, 4.0).unwrap(),
        ];
        for c in &fams {
            assert_eq!(c.cdf(&[0.37, 1.0]).unwrap(), 0.37);
            assert_eq!(c.cdf(&[1.0, 0.8]).unwrap(), 0.8);
            assert_eq!(c.cdf(&[0.0, 0.8]).unwrap(), 0.0);
        }
        assert!(matches!(
            Copula::gumbel(2.0, 3).unwrap().cdf(&[0.5, 0.5]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn gaussian_cdf_reference() {
        // orthant probability: P(Z1 ≤ 0, Z2 ≤ 0) = 1/4 + asin(ρ)/(2π)
        for rho in [-0.7, 0.0, 0.5, 0.9] {
            let c = Copula::gaussian(rho).unwrap();
            let want = 0.25 + f64::asin(rho) / (2.0 * std::f64::consts::PI);
            let got = c.cdf(&[0.5, 0.5]).unwrap();
            assert!((got - want).abs() < 1e-11, "rho={rho} {got} {want}");
        }
        // trivariate orthant: 1/8 + (asin ρ12 + asin ρ13 + asin ρ23)/(4π)
        let corr = [1.0, 0.3, 0.5, 0.3, 1.0, -0.2, 0.5, -0.2, 1.0];
        let c = Copula::gaussian_corr(&corr, 3).unwrap();
        let want = 0.125 + (0.3f64.asin() + 0.5f64.asin() + (-0.2f64).asin()) / (4.0 * std::f64::consts::PI);
        assert!((c.cdf(&[0.5, 0.5, 0.5]).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn student_t_cdf_reference() {
        // orthant probability is the same as the Gaussian one for any ν
        for (rho, nu) in [(0.5, 3.0), (-0.3, 7.5)] {
            let c = Copula::student_t(rho, nu).unwrap();
            let want = 0.25 + f64::asin(rho) / (2.0 * std::f64::consts::PI);
            assert!((c.cdf(&[0.5, 0.5]).unwrap() - want).abs() < 1e-11);
        }
    }

    #[test]
    fn log_density_examples() {
        let g = Copula::gaussian(0.0).unwrap();
        assert_eq!(g.log_density(&[0.1, 0.77]).unwrap(), 0.0);
        let f = Copula::frank(1e-3).unwrap();
        assert!(f.log_density(&[0.3, 0.7]).unwrap().abs() < 1e-3);
        // ∂²C/∂u∂v at step 1e-5
        let c = Copula::gumbel(2.0, 2).unwrap();
        let h = 1e-5;
        let cdf = |a: f64, b: f64| c.cdf(&[a, b]).unwrap();
        let mixed = (cdf(0.5 + h, 0.5 + h) - cdf(0.5 + h, 0.5 - h) - cdf(0.5 - h, 0.5 + h) + cdf(0.5 - h, 0.5 - h))
            / (4.0 * h * h);
        let d = c.density(&[0.5, 0.5]).unwrap();
        assert!(rel(d, mixed) < 1e-4, "{d} vs {mixed}");
        assert!((d - 1.51602).abs() < 1e-4);
    }

    #[test]
    fn gumbel_alpha_one_is_independence() {
        let c3 = Copula::gumbel(1.0, 3).unwrap();
        assert!(c3.log_density(&[0.2, 0.5, 0.9]).unwrap().abs() < 1e-14);
        let c2 = Copula::gumbel(1.0, 2).unwrap();
        assert!(c2.log_density(&[0.2, 0.9]).unwrap().abs() < 1e-14);
    }

    #[test]
    fn trivariate_gumbel_mixed_derivative() {
        let c = Copula::gumbel(2.0, 3).unwrap();
        let h = 1e-3;
        let mut mixed = 0.0;
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    let sign: f64 = sx * sy * sz;
                    mixed += sign * c.cdf(&[0.5 + sx * h, 0.5 + sy * h, 0.5 + sz * h]).unwrap();
                }
            }
        }
        mixed /= 8.0 * h * h * h;
        let d = trivariate_gumbel_log_density(2.0, 0.5, 0.5, 0.5).unwrap().exp();
        assert!(rel(d, mixed) < 1e-3, "{d} vs {mixed}");
        let a = trivariate_gumbel_log_density(2.0, 0.2, 0.5, 0.9).unwrap();
        let b = trivariate_gumbel_log_density(2.0, 0.9, 0.2, 0.5).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn gaussian_m_matches_bivariate_closed_form() {
        let rho: f64 = 0.6;
        let l = [1.0, 0.0, rho, (1.0 - rho * rho).sqrt()];
        for (u, v) in [(0.3, 0.8), (0.05, 0.5), (0.99, 0.97)] {
            let (x, y) = (std_normal_quantile(u).unwrap(), std_normal_quantile(v).unwrap());
            let closed = -(1.0 - rho * rho).sqrt().ln()
                - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * (1.0 - rho * rho));
            let got = gaussian_copula_log_density_m(&l, &[u, v]).unwrap();
            assert!((got - closed).abs() < 1e-10);
        }
        assert!(matches!(
            gaussian_copula_log_density_m(&[1.0, 0.0, 0.9, 0.9], &[0.5, 0.5]),
            Err(Error::NotPositiveDefinite(_))
        ));
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(gaussian_copula_log_density_m(&eye, &[0.2, 0.4, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn dependence_values() {
        assert_eq!(Copula::gumbel(2.0, 2).unwrap().dependence_measure().unwrap(), 0.5);
        assert_eq!(Copula::gumbel(1.0, 2).unwrap().dependence_measure().unwrap(), 0.0);
        let g = Copula::gaussian(0.8).unwrap().dependence_measure().unwrap();
        assert!((g - 0.5903).abs() < 1e-4);
        assert!((Copula::clayton(2.0).unwrap().dependence_measure().unwrap() - 0.5).abs() < 1e-15);
        // Frank τ is odd in α and ≈ α/9 near zero
        let f = Copula::frank(5.0).unwrap().dependence_measure().unwrap();
        let fm = Copula::frank(-5.0).unwrap().dependence_measure().unwrap();
        assert!((f + fm).abs() < 1e-12);
        let small = Copula::frank(0.01).unwrap().dependence_measure().unwrap();
        assert!((small - 0.01 / 9.0).abs() < 1e-6);
    }

    #[test]
    fn debye_reference() {
        // D₁(1) = 0.777504634112248...
        assert!((debye1(1.0) - 0.777_504_634_112_248).abs() < 1e-13);
    }

    #[test]
    fn unsupported_dims() {
        let c = Copula::gumbel(2.0, 4).unwrap();
        assert!(matches!(c.log_density(&[0.5; 4]), Err(Error::UnsupportedDim { .. })));
        assert!(c.cdf(&[0.5; 4]).is_ok());
        assert!(matches!(c.dependence_measure(), Err(Error::UnsupportedDim { .. })));
    }
}
