//! Parametric copulas over `[0, 1]^M`: Gumbel, Clayton, Frank, Gaussian,
//! Student-t and the independence copula.
//!
//! [`Copula`] holds constrained parameter values and evaluates directly.
//! [`CopulaModel`] holds an unconstrained parameter vector for training and
//! maps it into the valid domain with [`constrain_params`].

mod archimedean;
mod density;
mod grid;
mod sample;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{RowFn, Tape, Tensor, Var};
use crate::dual::{Dual, Real};
use crate::error::{Error, Result};

pub use archimedean::Generator;
pub use density::{gaussian_copula_log_density_m, gumbel_bivariate_log_density, trivariate_gumbel_log_density};
pub use grid::{density_grid, density_grid_csv, GRID_HI, GRID_LO, GRID_N};
pub use sample::sample_copula;

/// Clamp applied to copula arguments before any logarithm.
pub const EPS: f64 = 1e-6;

/// Smallest Frank |α| produced by the constraint map.
pub const FRANK_FLOOR: f64 = 1e-3;

/// Offset keeping the constrained Clayton α away from zero.
pub const CLAYTON_OFFSET: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Clayton,
    Frank,
    Gumbel,
    Gaussian,
    StudentT,
    Independence,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Clayton,
        Family::Frank,
        Family::Gumbel,
        Family::Gaussian,
        Family::StudentT,
        Family::Independence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Clayton => "clayton",
            Family::Frank => "frank",
            Family::Gumbel => "gumbel",
            Family::Gaussian => "gaussian",
            Family::StudentT => "student_t",
            Family::Independence => "independence",
        }
    }

    /// Number of unconstrained parameters for an `dim`-variate copula.
    pub fn arity(self, dim: usize) -> usize {
        let pairs = dim * dim.saturating_sub(1) / 2;
        match self {
            Family::Clayton | Family::Frank | Family::Gumbel => 1,
            Family::Gaussian => pairs,
            Family::StudentT => pairs + 1,
            Family::Independence => 0,
        }
    }

    pub fn is_archimedean(self) -> bool {
        matches!(self, Family::Clayton | Family::Frank | Family::Gumbel)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "clayton" => Ok(Family::Clayton),
            "frank" => Ok(Family::Frank),
            "gumbel" => Ok(Family::Gumbel),
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "student_t" | "studentt" | "t" => Ok(Family::StudentT),
            "independence" | "independent" => Ok(Family::Independence),
            other => Err(Error::Config(format!("unknown copula family '{other}'"))),
        }
    }
}

/// Constrained parameters. Correlation factors are row-major `M×M`
/// lower-triangular Cholesky factors with unit-norm rows.
#[derive(Clone, Debug, PartialEq)]
pub enum Params<T> {
    Independence,
    Gumbel(T),
    Clayton(T),
    Frank(T),
    Gaussian { chol: Vec<T> },
    StudentT { chol: Vec<T>, nu: T },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Copula<T = f64> {
    pub dim: usize,
    pub params: Params<T>,
}

impl<T> Copula<T> {
    pub fn family(&self) -> Family {
        match self.params {
            Params::Independence => Family::Independence,
            Params::Gumbel(_) => Family::Gumbel,
            Params::Clayton(_) => Family::Clayton,
            Params::Frank(_) => Family::Frank,
            Params::Gaussian { .. } => Family::Gaussian,
            Params::StudentT { .. } => Family::StudentT,
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::domain("copula", format!("dimension must be at least 2, got {dim}")));
    }
    Ok(())
}

impl Copula<f64> {
    pub fn independence(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Copula {
            dim,
            params: Params::Independence,
        })
    }

    pub fn gumbel(alpha: f64, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if !(alpha >= 1.0 && alpha.is_finite()) {
            return Err(Error::domain("gumbel", format!("alpha must be >= 1, got {alpha}")));
        }
        Ok(Copula {
            dim,
            params: Params::Gumbel(alpha),
        })
    }

    pub fn clayton(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::domain("clayton", format!("alpha must be > 0, got {alpha}")));
        }
        Ok(Copula {
            dim: 2,
            params: Params::Clayton(alpha),
        })
    }

    pub fn frank(alpha: f64) -> Result<Self> {
        if alpha == 0.0 || !alpha.is_finite() {
            return Err(Error::domain("frank", format!("alpha must be nonzero, got {alpha}")));
        }
        Ok(Copula {
            dim: 2,
            params: Params::Frank(alpha),
        })
    }

    /// Bivariate Gaussian copula with correlation `rho`.
    pub fn gaussian(rho: f64) -> Result<Self> {
        let chol = bivariate_factor(rho)?;
        Ok(Copula {
            dim: 2,
            params: Params::Gaussian { chol },
        })
    }

    /// Gaussian copula from a full correlation matrix (row-major `M×M`).
    pub fn gaussian_corr(corr: &[f64], dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let chol = correlation_cholesky(corr, dim)?;
        Ok(Copula {
            dim,
            params: Params::Gaussian { chol },
        })
    }

    pub fn student_t(rho: f64, nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::domain("student_t", format!("nu must be > 0, got {nu}")));
        }
        Ok(Copula {
            dim: 2,
            params: Params::StudentT {
                chol: bivariate_factor(rho)?,
                nu,
            },
        })
    }

    /// Builds a copula from constrained values in the order used on the
    /// command line: `[α]` for Archimedean families, the strictly lower
    /// correlations for Gaussian, and those followed by `ν` for Student-t.
    pub fn from_values(family: Family, values: &[f64], dim: usize) -> Result<Self> {
        let want = family.arity(dim);
        if values.len() != want {
            return Err(Error::ArityMismatch {
                family: family.name(),
                expected: want,
                got: values.len(),
            });
        }
        let bivariate_only = |f: Family| {
            if dim != 2 {
                Err(Error::UnsupportedDim {
                    family: f.name(),
                    op: "construct",
                    dim,
                })
            } else {
                Ok(())
            }
        };
        match family {
            Family::Independence => Copula::independence(dim),
            Family::Gumbel => Copula::gumbel(values[0], dim),
            Family::Clayton => {
                bivariate_only(family)?;
                Copula::clayton(values[0])
            }
            Family::Frank => {
                bivariate_only(family)?;
                Copula::frank(values[0])
            }
            Family::Gaussian => Copula::gaussian_corr(&corr_from_lower(values, dim), dim),
            Family::StudentT => {
                let (rho, nu) = values.split_at(values.len() - 1);
                check_dim(dim)?;
                let chol = correlation_cholesky(&corr_from_lower(rho, dim), dim)?;
                if !(nu[0] > 0.0) {
                    return Err(Error::domain("student_t", format!("nu must be > 0, got {}", nu[0])));
                }
                Ok(Copula {
                    dim,
                    params: Params::StudentT { chol, nu: nu[0] },
                })
            }
        }
    }

    /// Off-diagonal correlation of a bivariate elliptical copula.
    pub fn rho(&self) -> Option<f64> {
        match &self.params {
            Params::Gaussian { chol } | Params::StudentT { chol, .. } if self.dim == 2 => Some(chol[2]),
            _ => None,
        }
    }

    /// Row-major correlation matrix of an elliptical copula.
    pub fn correlation(&self) -> Option<Vec<f64>> {
        match &self.params {
            Params::Gaussian { chol } | Params::StudentT { chol, .. } => {
                let m = self.dim;
                let mut s = vec![0.0; m * m];
                for i in 0..m {
                    for j in 0..m {
                        s[i * m + j] = (0..=i.min(j)).map(|k| chol[i * m + k] * chol[j * m + k]).sum();
                    }
                }
                Some(s)
            }
            _ => None,
        }
    }

    pub fn cdf(&self, u: &[f64]) -> Result<f64> {
        density::cdf(self, u)
    }

    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        density::log_density(self, u)
    }

    pub fn density(&self, u: &[f64]) -> Result<f64> {
        Ok(self.log_density(u)?.exp())
    }

    pub fn dependence_measure(&self) -> Result<f64> {
        density::dependence_measure(self)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        sample::sample(self, n, seed)
    }

    /// Unconstrained parameters that reproduce this copula under
    /// [`constrain_params`]. Fails for boundary values the map cannot reach
    /// (e.g. Gumbel α = 1).
    pub fn to_model(&self) -> Result<CopulaModel> {
        let unreachable = |what: &str| Error::domain("to_model", format!("{what} is not reachable by the constraint map"));
        let raw = match &self.params {
            Params::Independence => vec![],
            Params::Gumbel(a) => {
                if *a <= 1.0 {
                    return Err(unreachable("gumbel alpha = 1"));
                }
                vec![softplus_inv(a - 1.0)]
            }
            Params::Clayton(a) => {
                if *a <= CLAYTON_OFFSET {
                    return Err(unreachable("clayton alpha <= 1e-4"));
                }
                vec![softplus_inv(a - CLAYTON_OFFSET)]
            }
            Params::Frank(a) => vec![*a],
            Params::Gaussian { chol } => cpc_from_cholesky(chol, self.dim),
            Params::StudentT { chol, nu } => {
                if *nu <= 2.0 {
                    return Err(unreachable("student_t nu <= 2"));
                }
                let mut r = cpc_from_cholesky(chol, self.dim);
                r.push(softplus_inv(nu - 2.0));
                r
            }
        };
        CopulaModel::new(self.family(), raw, self.dim)
    }
}

fn bivariate_factor(rho: f64) -> Result<Vec<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::NotPositiveDefinite(format!("|rho| = {} must be < 1", rho.abs())));
    }
    Ok(vec![1.0, 0.0, rho, (1.0 - rho * rho).sqrt()])
}

fn corr_from_lower(lower: &[f64], dim: usize) -> Vec<f64> {
    let mut s = vec![0.0; dim * dim];
    let mut k = 0;
    for i in 0..dim {
        s[i * dim + i] = 1.0;
        for j in 0..i {
            if let Some(&r) = lower.get(k) {
                s[i * dim + j] = r;
                s[j * dim + i] = r;
            }
            k += 1;
        }
    }
    s
}

/// Cholesky factor of a correlation matrix; rejects non-unit diagonals and
/// matrices that are not positive definite.
pub fn correlation_cholesky(corr: &[f64], dim: usize) -> Result<Vec<f64>> {
    if corr.len() != dim * dim {
        return Err(Error::DimMismatch {
            expected: dim * dim,
            got: corr.len(),
        });
    }
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        if (corr[i * dim + i] - 1.0).abs() > 1e-12 {
            return Err(Error::NotPositiveDefinite(format!("diagonal entry {i} is {}", corr[i * dim + i])));
        }
        for j in 0..=i {
            let mut s = corr[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if s <= 1e-14 {
                    return Err(Error::NotPositiveDefinite(format!("pivot {i} is {s}")));
                }
                l[i * dim + i] = s.sqrt();
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    Ok(l)
}

/// Correlation Cholesky factor from canonical partial correlations
/// `z = tanh(raw)`, listed row by row over the strict lower triangle.
pub(crate) fn cpc_cholesky<T: Real>(raw: &[T], dim: usize) -> Result<Vec<T>> {
    let mut l = vec![T::cst(0.0); dim * dim];
    l[0] = T::cst(1.0);
    let mut k = 0;
    for i in 1..dim {
        let mut rem = T::cst(1.0);
        for j in 0..i {
            let z = raw[k].tanh();
            k += 1;
            let lij = if j == 0 { z } else { z * rem.sqrt() };
            rem = rem - lij * lij;
            l[i * dim + j] = lij;
        }
        if !(rem.re() > 0.0) {
            return Err(Error::NotPositiveDefinite(format!("row {i} has no remaining variance")));
        }
        l[i * dim + i] = rem.sqrt();
    }
    Ok(l)
}

fn cpc_from_cholesky(chol: &[f64], dim: usize) -> Vec<f64> {
    let mut raw = Vec::with_capacity(dim * (dim - 1) / 2);
    for i in 1..dim {
        let mut rem = 1.0;
        for j in 0..i {
            let lij = chol[i * dim + j];
            let z = if rem > 0.0 { lij / rem.sqrt() } else { 0.0 };
            raw.push(z.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh());
            rem -= lij * lij;
        }
    }
    raw
}

fn softplus_inv(y: f64) -> f64 {
    // log(e^y − 1) = y + log(1 − e^{−y})
    y + (-(-y).exp_m1()).ln()
}

/// Generic form of [`constrain_params`].
pub(crate) fn constrain<T: Real>(family: Family, raw: &[T], dim: usize) -> Result<Copula<T>> {
    check_dim(dim)?;
    let want = family.arity(dim);
    if raw.len() != want {
        return Err(Error::ArityMismatch {
            family: family.name(),
            expected: want,
            got: raw.len(),
        });
    }
    let params = match family {
        Family::Independence => Params::Independence,
        Family::Gumbel => Params::Gumbel(raw[0].softplus() + 1.0),
        Family::Clayton => Params::Clayton(raw[0].softplus() + CLAYTON_OFFSET),
        Family::Frank => {
            let a = raw[0];
            Params::Frank(if a.re().abs() < FRANK_FLOOR {
                T::cst(if a.re() < 0.0 { -FRANK_FLOOR } else { FRANK_FLOOR })
            } else {
                a
            })
        }
        Family::Gaussian => Params::Gaussian {
            chol: cpc_cholesky(raw, dim)?,
        },
        Family::StudentT => {
            let p = want - 1;
            Params::StudentT {
                chol: cpc_cholesky(&raw[..p], dim)?,
                nu: raw[p].softplus() + 2.0,
            }
        }
    };
    Ok(Copula { dim, params })
}

/// Trainable copula: family, unconstrained parameters and dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopulaModel {
    pub family: Family,
    pub raw_params: Vec<f64>,
    pub dim: usize,
}

impl CopulaModel {
    pub fn new(family: Family, raw_params: Vec<f64>, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let want = family.arity(dim);
        if raw_params.len() != want {
            return Err(Error::ArityMismatch {
                family: family.name(),
                expected: want,
                got: raw_params.len(),
            });
        }
        Ok(CopulaModel {
            family,
            raw_params,
            dim,
        })
    }

    /// All raw parameters zero.
    pub fn init(family: Family, dim: usize) -> Result<Self> {
        CopulaModel::new(family, vec![0.0; family.arity(dim)], dim)
    }

    pub fn arity(&self) -> usize {
        self.family.arity(self.dim)
    }
}

pub fn constrain_params(model: &CopulaModel) -> Result<Copula> {
    constrain(model.family, &model.raw_params, model.dim)
}

pub fn copula_cdf(model: &CopulaModel, u: &[f64]) -> Result<f64> {
    constrain_params(model)?.cdf(u)
}

pub fn copula_log_density(model: &CopulaModel, u: &[f64]) -> Result<f64> {
    constrain_params(model)?.log_density(u)
}

pub fn dependence_measure(model: &CopulaModel) -> Result<f64> {
    constrain_params(model)?.dependence_measure()
}

/// Log-density with its gradients in the raw parameters and in `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogDensityGrad {
    pub value: f64,
    pub raw: Vec<f64>,
    pub u: Vec<f64>,
}

macro_rules! with_width {
    ($n:expr, $N:ident => $body:expr) => {
        match $n {
            0..=4 => {
                const $N: usize = 4;
                $body
            }
            5..=8 => {
                const $N: usize = 8;
                $body
            }
            9..=16 => {
                const $N: usize = 16;
                $body
            }
            17..=32 => {
                const $N: usize = 32;
                $body
            }
            33..=64 => {
                const $N: usize = 64;
                $body
            }
            n => Err(Error::domain("copula_log_density_grad", format!("{n} inputs exceed the supported 64"))),
        }
    };
}

fn grad_dual<const N: usize>(family: Family, dim: usize, raw: &[f64], u: &[f64]) -> Result<LogDensityGrad> {
    let p = raw.len();
    let rd: Vec<Dual<N>> = raw.iter().enumerate().map(|(i, &r)| Dual::var(r, i)).collect();
    let ud: Vec<Dual<N>> = u.iter().enumerate().map(|(i, &x)| Dual::var(x, p + i)).collect();
    let c = constrain(family, &rd, dim)?;
    let out = density::log_density_generic(&c, &ud)?;
    let grads_ok = out.eps.iter().all(|g| g.is_finite());
    if !grads_ok {
        return Err(Error::Boundary(family.name()));
    }
    Ok(LogDensityGrad {
        value: out.re,
        raw: out.eps[..p].to_vec(),
        u: out.eps[p..p + u.len()].to_vec(),
    })
}

pub fn copula_log_density_grad(model: &CopulaModel, u: &[f64]) -> Result<LogDensityGrad> {
    if u.len() != model.dim {
        return Err(Error::DimMismatch {
            expected: model.dim,
            got: u.len(),
        });
    }
    let n = model.raw_params.len() + u.len();
    with_width!(n, N => grad_dual::<N>(model.family, model.dim, &model.raw_params, u))
}

/// Records the per-row copula log-density `log c(u_i)` on the tape.
///
/// `raw` is the `[P]` raw-parameter node and `u` an `[n, M]` node of margin
/// values; the arguments are clamped to `[EPS, 1 − EPS]` first. Returns `[n]`.
pub fn log_density_on_tape(tape: &mut Tape, family: Family, dim: usize, raw: Var, u: Var) -> Result<Var> {
    let shape = tape.shape(u).to_vec();
    if shape.len() != 2 || shape[1] != dim {
        return Err(Error::ShapeMismatch {
            op: "copula_log_density",
            lhs: shape,
            rhs: vec![0, dim],
        });
    }
    let uc = tape.clamp(u, EPS, 1.0 - EPS)?;
    let raw_vals = tape.value(raw).data().to_vec();
    let n = shape[0];
    let p = raw_vals.len();
    let mut value = Vec::with_capacity(n);
    let mut j_raw = Vec::with_capacity(n * p);
    let mut j_u = Vec::with_capacity(n * dim);
    let model = CopulaModel::new(family, raw_vals, dim)?;
    for i in 0..n {
        let row = tape.value(uc).row(i).to_vec();
        let g = copula_log_density_grad(&model, &row)?;
        value.push(g.value);
        j_raw.extend(g.raw);
        j_u.extend(g.u);
    }
    let f = RowFn {
        name: "copula_log_density",
        value: Tensor::vector(value),
        jacobians: vec![Tensor::new(vec![n, p], j_raw)?, Tensor::new(vec![n, dim], j_u)?],
        shared: vec![true, false],
    };
    tape.rows(f, &[raw, uc])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constraint_examples() {
        let g = constrain_params(&CopulaModel::new(Family::Gumbel, vec![0.0], 2).unwrap()).unwrap();
        assert_eq!(g.params, Params::Gumbel(1.0 + std::f64::consts::LN_2));
        let c = constrain_params(&CopulaModel::new(Family::Gaussian, vec![0.0], 2).unwrap()).unwrap();
        assert_eq!(c.rho(), Some(0.0));
        let cl = constrain_params(&CopulaModel::new(Family::Clayton, vec![5.0], 2).unwrap()).unwrap();
        let expect = 5.0 + (-5.0f64).exp().ln_1p() + 1e-4;
        match cl.params {
            Params::Clayton(a) => {
                assert!((a - expect).abs() < 1e-14);
                assert!((a - 5.0068).abs() < 1e-4);
            }
            _ => unreachable!(),
        }
        let f = constrain_params(&CopulaModel::new(Family::Frank, vec![-1e-5], 2).unwrap()).unwrap();
        assert_eq!(f.params, Params::Frank(-FRANK_FLOOR));
        let f = constrain_params(&CopulaModel::new(Family::Frank, vec![0.0], 2).unwrap()).unwrap();
        assert_eq!(f.params, Params::Frank(FRANK_FLOOR));
    }

    #[test]
    fn arity_is_checked() {
        assert!(matches!(
            CopulaModel::new(Family::Gaussian, vec![0.0], 3),
            Err(Error::ArityMismatch { expected: 3, .. })
        ));
        assert_eq!(Family::StudentT.arity(3), 4);
        assert!(matches!(
            constrain::<f64>(Family::Gumbel, &[], 2),
            Err(Error::ArityMismatch { .. })
        ));
    }

    #[test]
    fn cpc_factor_has_unit_rows() {
        let raw = [0.3, -1.2, 0.8, 2.0, -0.4, 0.1];
        let l = cpc_cholesky(&raw, 4).unwrap();
        for i in 0..4 {
            let norm: f64 = (0..4).map(|k| l[i * 4 + k] * l[i * 4 + k]).sum();
            assert!((norm - 1.0).abs() < 1e-14);
            assert!(l[i * 4 + i] > 0.0);
        }
        let back = cpc_from_cholesky(&l, 4);
        for (a, b) in raw.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
        let c = Copula::gaussian_corr(&{
            let cop = Copula { dim: 4, params: Params::Gaussian { chol: l.clone() } };
            cop.correlation().unwrap()
        }, 4)
        .unwrap();
        match c.params {
            Params::Gaussian { chol } => {
                for (a, b) in chol.iter().zip(&l) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn model_round_trip() {
        for c in [
            Copula::gumbel(2.5, 2).unwrap(),
            Copula::clayton(0.7).unwrap(),
            Copula::frank(-3.0).unwrap(),
            Copula::gaussian(-0.4).unwrap(),
            Copula::student_t(0.3, 6.0).unwrap(),
        ] {
            let m = c.to_model().unwrap();
            let back = constrain_params(&m).unwrap();
            let u = [0.3, 0.8];
            assert!((back.log_density(&u).unwrap() - c.log_density(&u).unwrap()).abs() < 1e-10);
        }
        assert!(Copula::gumbel(1.0, 2).unwrap().to_model().is_err());
    }

    #[test]
    fn family_parsing() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("vine".parse::<Family>().is_err());
    }

    #[test]
    fn independence_gradient_is_zero() {
        let m = CopulaModel::init(Family::Independence, 2).unwrap();
        let g = copula_log_density_grad(&m, &[0.2, 0.9]).unwrap();
        assert_eq!(g.value, 0.0);
        assert!(g.raw.is_empty());
        assert_eq!(g.u, vec![0.0, 0.0]);
    }

    fn central<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gumbel_alpha_gradient() {
        // α = 2 ⇔ raw = softplus⁻¹(1); chain through dα/draw = sigmoid(raw)
        let raw = softplus_inv(1.0);
        let m = CopulaModel::new(Family::Gumbel, vec![raw], 2).unwrap();
        let g = copula_log_density_grad(&m, &[0.5, 0.5]).unwrap();
        let d_alpha = g.raw[0] / crate::autodiff::sigmoid(raw);
        let fd = central(|a| gumbel_bivariate_log_density(a, 0.5, 0.5).unwrap(), 2.0, 1e-5);
        assert!(((d_alpha - fd) / fd).abs() < 1e-4, "{d_alpha} vs {fd}");
    }

    #[test]
    fn gaussian_u_gradient() {
        let m = Copula::gaussian(0.5).unwrap().to_model().unwrap();
        let g = copula_log_density_grad(&m, &[0.4, 0.6]).unwrap();
        let c = Copula::gaussian(0.5).unwrap();
        let fd0 = central(|x| c.log_density(&[x, 0.6]).unwrap(), 0.4, 1e-5);
        let fd1 = central(|x| c.log_density(&[0.4, x]).unwrap(), 0.6, 1e-5);
        assert!(((g.u[0] - fd0) / fd0).abs() < 1e-4);
        assert!(((g.u[1] - fd1) / fd1).abs() < 1e-4);
    }

    #[test]
    fn tape_node_matches_direct_gradients() {
        let m = Copula::student_t(0.4, 5.0).unwrap().to_model().unwrap();
        let rows = [[0.2, 0.7], [0.9, 0.85], [0.5, 0.1]];
        let mut tape = Tape::new();
        let raw = tape.leaf(Tensor::vector(m.raw_params.clone()));
        let u = tape.leaf(Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap());
        let lc = log_density_on_tape(&mut tape, Family::StudentT, 2, raw, u).unwrap();
        let s = tape.sum(lc).unwrap();
        let g = tape.backward(s).unwrap();
        let mut want_raw = [0.0; 2];
        for (i, r) in rows.iter().enumerate() {
            let d = copula_log_density_grad(&m, r).unwrap();
            want_raw[0] += d.raw[0];
            want_raw[1] += d.raw[1];
            assert_eq!(&g.wrt(&tape, u).data()[2 * i..2 * i + 2], d.u.as_slice());
        }
        let got = g.wrt(&tape, raw);
        for k in 0..2 {
            assert!((got.data()[k] - want_raw[k]).abs() < 1e-12);
        }
    }
}
