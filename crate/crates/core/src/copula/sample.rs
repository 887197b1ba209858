use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::{constrain_params, Copula, CopulaModel, Generator, Params};
use crate::error::{Error, Result};
use crate::special::t_cdf;
use crate::stats::std_normal_cdf;

/// Uniform draw on the open interval (0, 1).
pub(crate) fn open_unit(rng: &mut impl Rng) -> f64 {
    loop {
        let x: f64 = rng.random();
        if x > 0.0 {
            return x;
        }
    }
}

/// Solves `h(v) = p` for increasing `h` on `(0, 1)` by bisection to `1e-10`.
fn invert(h: impl Fn(f64) -> Result<f64>, p: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if h(mid)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn correlated_normals(chol: &[f64], m: usize, rng: &mut impl Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    (0..m).map(|i| (0..=i).map(|j| chol[i * m + j] * w[j]).sum()).collect()
}

pub(crate) fn sample(c: &Copula, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = c.dim;
    let family = c.family();
    let mut out = Vec::with_capacity(n);
    match &c.params {
        Params::Independence => {
            for _ in 0..n {
                out.push((0..m).map(|_| open_unit(&mut rng)).collect());
            }
        }
        Params::Gumbel(a) | Params::Clayton(a) | Params::Frank(a) => {
            if m != 2 {
                return Err(Error::UnsupportedDim {
                    family: family.name(),
                    op: "sample",
                    dim: m,
                });
            }
            let g = Generator::new(family, *a)?;
            for _ in 0..n {
                let u = open_unit(&mut rng);
                let p = open_unit(&mut rng);
                let v = invert(|v| g.conditional(u, v), p)?;
                out.push(vec![u, v]);
            }
        }
        Params::Gaussian { chol } => {
            for _ in 0..n {
                let z = correlated_normals(chol, m, &mut rng);
                out.push(z.into_iter().map(std_normal_cdf).collect());
            }
        }
        Params::StudentT { chol, nu } => {
            let chi = ChiSquared::new(*nu).map_err(|e| Error::domain("sample", e.to_string()))?;
            for _ in 0..n {
                let z = correlated_normals(chol, m, &mut rng);
                let scale = (nu / chi.sample(&mut rng)).sqrt();
                out.push(z.into_iter().map(|x| t_cdf(x * scale, *nu)).collect());
            }
        }
    }
    Ok(out)
}

/// `n` draws from the copula of `model`; the stream is determined by `seed`.
pub fn sample_copula(model: &CopulaModel, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    constrain_params(model)?.sample(n, seed)
}
