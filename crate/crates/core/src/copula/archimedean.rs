use super::Family;
use crate::error::{Error, Result};

/// Archimedean generator `φ` of a Gumbel, Clayton or Frank copula, with
/// `C(u) = φ⁻¹(Σ φ(u_i))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Generator {
    family: Family,
    alpha: f64,
}

impl Generator {
    pub fn new(family: Family, alpha: f64) -> Result<Self> {
        let ok = match family {
            Family::Gumbel => alpha >= 1.0,
            Family::Clayton => alpha > 0.0,
            Family::Frank => alpha != 0.0,
            _ => return Err(Error::domain("generator", format!("{family} is not Archimedean"))),
        };
        if !ok || !alpha.is_finite() {
            return Err(Error::domain("generator", format!("invalid {family} alpha {alpha}")));
        }
        Ok(Generator { family, alpha })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn check_t(t: f64) -> Result<()> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::domain("generator", format!("t = {t} outside (0, 1]")));
        }
        Ok(())
    }

    fn check_s(s: f64) -> Result<()> {
        if !(s >= 0.0) {
            return Err(Error::domain("generator inverse", format!("s = {s} is negative")));
        }
        Ok(())
    }

    pub fn phi(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        let a = self.alpha;
        Ok(match self.family {
            Family::Gumbel => (-t.ln()).powf(a),
            Family::Clayton => (t.powf(-a) - 1.0) / a,
            _ => -((-a * t).exp_m1() / (-a).exp_m1()).ln(),
        })
    }

    pub fn phi_prime(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        let a = self.alpha;
        Ok(match self.family {
            Family::Gumbel => -a * (-t.ln()).powf(a - 1.0) / t,
            Family::Clayton => -t.powf(-a - 1.0),
            // α e^{−αt} / (e^{−αt} − 1) = α / (1 − e^{αt})
            _ => -a / (a * t).exp_m1(),
        })
    }

    pub fn phi_inv(&self, s: f64) -> Result<f64> {
        self.phi_inv_deriv(0, s)
    }

    /// `k`-th derivative of `φ⁻¹` at `s`, for `k ≤ 3`.
    pub fn phi_inv_deriv(&self, k: usize, s: f64) -> Result<f64> {
        Self::check_s(s)?;
        if k > 3 {
            return Err(Error::domain("generator inverse", format!("derivative order {k} > 3")));
        }
        let a = self.alpha;
        Ok(match self.family {
            Family::Gumbel => {
                let th = 1.0 / a;
                if s == 0.0 {
                    return Ok(if k == 0 { 1.0 } else if a == 1.0 { [1.0, -1.0, 1.0, -1.0][k] } else { f64::NEG_INFINITY });
                }
                let psi = (-s.powf(th)).exp();
                let p = |e: f64| s.powf(e);
                psi * match k {
                    0 => 1.0,
                    1 => -th * p(th - 1.0),
                    2 => th * th * p(2.0 * th - 2.0) - th * (th - 1.0) * p(th - 2.0),
                    _ => {
                        -th.powi(3) * p(3.0 * th - 3.0) + 3.0 * th * th * (th - 1.0) * p(2.0 * th - 3.0)
                            - th * (th - 1.0) * (th - 2.0) * p(th - 3.0)
                    }
                }
            }
            Family::Clayton => {
                let coef: f64 = (0..k).map(|j| 1.0 + j as f64 * a).product();
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * coef * (1.0 + a * s).powf(-1.0 / a - k as f64)
            }
            _ => {
                let w = (-s).exp() * (-a).exp_m1();
                match k {
                    0 => -w.ln_1p() / a,
                    1 => w / (a * (1.0 + w)),
                    2 => -w / (a * (1.0 + w).powi(2)),
                    _ => w * (1.0 - w) / (a * (1.0 + w).powi(3)),
                }
            }
        })
    }

    pub fn cdf(&self, u: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for &x in u {
            s += self.phi(x)?;
        }
        self.phi_inv(s)
    }

    /// Density from the generator identity `c(u) = (φ⁻¹)^{(d)}(Σφ(u_j)) Π φ′(u_j)`, `d ≤ 3`.
    pub fn density(&self, u: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        let mut prod = 1.0;
        for &x in u {
            s += self.phi(x)?;
            prod *= self.phi_prime(x)?;
        }
        Ok(self.phi_inv_deriv(u.len(), s)? * prod)
    }

    /// Conditional distribution `P(V ≤ v | U = u) = ∂C(u, v)/∂u`.
    pub fn conditional(&self, u: f64, v: f64) -> Result<f64> {
        if v <= 0.0 {
            return Ok(0.0);
        }
        if v >= 1.0 {
            return Ok(1.0);
        }
        let s = self.phi(u)? + self.phi(v)?;
        Ok((self.phi_inv_deriv(1, s)? * self.phi_prime(u)?).clamp(0.0, 1.0))
    }
}
