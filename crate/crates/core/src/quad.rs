//! Deterministic quadrature rules used by the elliptical-copula CDFs, the Frank
//! dependence measure and the Student-t parameter derivative.

use std::sync::OnceLock;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

/// Composite 16-point Gauss–Legendre over `[a, b]` with panels no wider than `max_width`.
pub fn integrate_gl(f: impl Fn(f64) -> f64, a: f64, b: f64, max_width: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = ((b - a) / max_width).ceil().max(1.0) as usize;
    integrate_gl_panels(f, a, b, panels)
}

/// Composite 16-point Gauss–Legendre with a fixed panel count, so the result
/// varies smoothly with the limits.
pub fn integrate_gl_panels(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let (x, w) = gl16();
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(w) {
            s += wi * f(mid + 0.5 * h * xi);
        }
        total += 0.5 * h * s;
    }
    total
}

/// A tanh-sinh node on `[0, 1]`: position, distance to 1, weight.
#[derive(Clone, Copy, Debug)]
pub struct TsNode {
    pub x: f64,
    pub one_minus_x: f64,
    pub weight: f64,
}

fn tanh_sinh_nodes() -> &'static [TsNode] {
    static NODES: OnceLock<Vec<TsNode>> = OnceLock::new();
    NODES.get_or_init(|| {
        let h = 1.0 / 32.0;
        let half_pi = std::f64::consts::FRAC_PI_2;
        let mut out = Vec::new();
        let kmax = (4.0 / h) as i64;
        for k in -kmax..=kmax {
            let t = k as f64 * h;
            let s = half_pi * t.sinh();
            // x = logistic(2s), 1 - x = logistic(-2s)
            let x = 1.0 / (1.0 + (-2.0 * s).exp());
            let omx = 1.0 / (1.0 + (2.0 * s).exp());
            let weight = h * std::f64::consts::PI * x * omx * t.cosh();
            if x > 0.0 && omx > 0.0 && weight > 0.0 {
                out.push(TsNode {
                    x,
                    one_minus_x: omx,
                    weight,
                });
            }
        }
        out
    })
}

/// `∫_0^1 g(x, 1-x) dx` by tanh-sinh quadrature; `g` receives both the node and
/// its complement so endpoint singularities can be evaluated without cancellation.
pub fn integrate_unit(g: impl Fn(f64, f64) -> f64) -> f64 {
    tanh_sinh_nodes()
        .iter()
        .map(|n| {
            let v = g(n.x, n.one_minus_x);
            if v.is_finite() {
                n.weight * v
            } else {
                0.0
            }
        })
        .sum()
}

/// `∫_{-∞}^{b} f(s) ds` via `s = b − c·w/(1−w)` and tanh-sinh in `w`.
pub fn integrate_lower_tail(f: impl Fn(f64) -> f64, b: f64, scale: f64) -> f64 {
    integrate_unit(|w, omw| {
        let r = scale * w / omw;
        f(b - r) * scale / (omw * omw)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn composite_gl_gaussian_mass() {
        let v = integrate_gl(crate::stats::std_normal_pdf, -12.0, 12.0, 0.5);
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn tanh_sinh_endpoint_singularity() {
        // ∫_0^1 x^{-1/2} dx = 2
        let v = integrate_unit(|x, _| x.powf(-0.5));
        assert!((v - 2.0).abs() < 1e-12, "{v}");
        // ∫_0^1 ln(1-x) dx = -1, evaluated through the complement
        let v = integrate_unit(|_, omx| omx.ln());
        assert!((v + 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn lower_tail_integral() {
        let v = integrate_lower_tail(crate::stats::std_normal_pdf, 0.7, 1.0);
        assert!((v - crate::stats::std_normal_cdf(0.7)).abs() < 1e-13, "{v}");
        // Cauchy: ∫_{-∞}^0 1/(π(1+s²)) = 1/2
        let v = integrate_lower_tail(|s| 1.0 / (std::f64::consts::PI * (1.0 + s * s)), 0.0, 1.0);
        assert!((v - 0.5).abs() < 1e-12, "{v}");
    }
}
