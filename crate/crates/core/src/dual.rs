//! Forward-mode dual numbers, used to differentiate copula log-densities with
//! respect to both their arguments and their raw parameters in one pass.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use statrs::function::gamma::{digamma, ln_gamma};

use crate::special::{t_cdf_d_nu, t_pdf, t_quantile};
use crate::stats::{std_normal_cdf, std_normal_pdf, std_normal_quantile};

/// Scalar arithmetic shared by `f64` and [`Dual`].
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(x: f64) -> Self;
    fn re(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn exp_m1(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    /// `self^e` for a constant exponent.
    fn powc(self, e: f64) -> Self;
    /// `self^e` with a variable exponent; requires `self > 0`.
    fn powr(self, e: Self) -> Self;
    fn ln_gamma(self) -> Self;
    /// `Φ⁻¹(self)`.
    fn norm_quantile(self) -> Self;
    fn norm_cdf(self) -> Self;
    /// `T_ν⁻¹(self)`.
    fn t_quantile(self, nu: Self) -> Self;

    fn softplus(self) -> Self {
        // log(1 + e^x) = max(x, 0) + log(1 + e^{-|x|})
        if self.re() > 0.0 {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    fn square(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn cst(x: f64) -> Self {
        x
    }
    fn re(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    fn exp_m1(self) -> Self {
        f64::exp_m1(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn powc(self, e: f64) -> Self {
        self.powf(e)
    }
    fn powr(self, e: Self) -> Self {
        self.powf(e)
    }
    fn ln_gamma(self) -> Self {
        ln_gamma(self)
    }
    fn norm_quantile(self) -> Self {
        std_normal_quantile(self).unwrap_or(f64::NAN)
    }
    fn norm_cdf(self) -> Self {
        std_normal_cdf(self)
    }
    fn t_quantile(self, nu: Self) -> Self {
        t_quantile(self, nu)
    }
}

/// Value plus `N` directional derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub eps: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(re: f64) -> Self {
        Dual { re, eps: [0.0; N] }
    }

    /// The `i`-th independent variable.
    pub fn var(re: f64, i: usize) -> Self {
        let mut eps = [0.0; N];
        eps[i] = 1.0;
        Dual { re, eps }
    }

    /// Chain rule for a scalar function with value `f` and slope `df`.
    fn chain(self, f: f64, df: f64) -> Self {
        let mut eps = self.eps;
        eps.iter_mut().for_each(|e| *e *= df);
        Dual { re: f, eps }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self.re += o.re;
        for (a, b) in self.eps.iter_mut().zip(o.eps) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    fn sub(mut self, o: Self) -> Self {
        self.re -= o.re;
        for (a, b) in self.eps.iter_mut().zip(o.eps) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut eps = [0.0; N];
        for (i, e) in eps.iter_mut().enumerate() {
            *e = self.eps[i] * o.re + self.re * o.eps[i];
        }
        Dual {
            re: self.re * o.re,
            eps,
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.re;
        let re = self.re * inv;
        let mut eps = [0.0; N];
        for (i, e) in eps.iter_mut().enumerate() {
            *e = (self.eps[i] - re * o.eps[i]) * inv;
        }
        Dual { re, eps }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.chain(-self.re, -1.0)
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    fn add(mut self, o: f64) -> Self {
        self.re += o;
        self
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    fn sub(mut self, o: f64) -> Self {
        self.re -= o;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        self.chain(self.re * o, o)
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        self.chain(self.re / o, 1.0 / o)
    }
}

impl<const N: usize> Real for Dual<N> {
    fn cst(x: f64) -> Self {
        Dual::constant(x)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), 1.0 / self.re)
    }
    fn ln_1p(self) -> Self {
        self.chain(self.re.ln_1p(), 1.0 / (1.0 + self.re))
    }
    fn exp_m1(self) -> Self {
        self.chain(self.re.exp_m1(), self.re.exp())
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, 1.0 - t * t)
    }
    fn abs(self) -> Self {
        if self.re < 0.0 {
            -self
        } else {
            self
        }
    }
    fn powc(self, e: f64) -> Self {
        self.chain(self.re.powf(e), e * self.re.powf(e - 1.0))
    }
    fn powr(self, e: Self) -> Self {
        (e * self.ln()).exp()
    }
    fn ln_gamma(self) -> Self {
        self.chain(ln_gamma(self.re), digamma(self.re))
    }
    fn norm_quantile(self) -> Self {
        let x = std_normal_quantile(self.re).unwrap_or(f64::NAN);
        self.chain(x, 1.0 / std_normal_pdf(x))
    }
    fn norm_cdf(self) -> Self {
        self.chain(std_normal_cdf(self.re), std_normal_pdf(self.re))
    }
    fn t_quantile(self, nu: Self) -> Self {
        let x = t_quantile(self.re, nu.re);
        let inv_pdf = 1.0 / t_pdf(x, nu.re);
        let d_nu = if nu.eps.iter().any(|&e| e != 0.0) {
            t_cdf_d_nu(x, nu.re)
        } else {
            0.0
        };
        let mut eps = [0.0; N];
        for (i, e) in eps.iter_mut().enumerate() {
            *e = (self.eps[i] - d_nu * nu.eps[i]) * inv_pdf;
        }
        Dual { re: x, eps }
    }
}
