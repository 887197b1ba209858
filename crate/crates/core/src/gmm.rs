//! Per-modality diagonal Gaussian mixture marginals.
//!
//! Plain `f64` functions take explicit mixture weights. The tape functions
//! work on [`GmmNodes`], the same parameters registered as tape variables, so
//! gradients reach means, log standard deviations and the weight source.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{RowFn, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::optim::{adam_step, collect_grads, tape_leaves, Adam, OptimizerState, ParamSet, Vars};
use crate::stats::{mvn_log_density, std_normal_inv_mills, std_normal_log_cdf, DiagGaussian, LN_2PI};

pub const DEFAULT_K: usize = 3;
/// Hidden width of the weight head.
pub const HEAD_HIDDEN: usize = 16;

/// Where the mixture weights come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// Global trainable logits.
    #[default]
    Logits,
    /// Tanh MLP mapping a context embedding to logits.
    Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WeightSource {
    Logits(Tensor),
    Mlp {
        w1: Tensor,
        b1: Tensor,
        w2: Tensor,
        b2: Tensor,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmMarginal {
    pub k: usize,
    pub dim: usize,
    /// `[K, D]`
    pub means: Tensor,
    /// `[K, D]`
    pub log_stds: Tensor,
    pub weights: WeightSource,
}

impl GmmMarginal {
    /// Means `0.1·N(0, 1)`, unit scales and uniform weights.
    pub fn init(k: usize, dim: usize, kind: WeightKind, rng: &mut impl Rng) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::domain("gmm_init", format!("K = {k}, D = {dim}")));
        }
        let means: Vec<f64> = (0..k * dim)
            .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let weights = match kind {
            WeightKind::Logits => WeightSource::Logits(Tensor::zeros(&[k])),
            WeightKind::Mlp => {
                let bound = 1.0 / (dim as f64).sqrt();
                let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let w1 = (0..dim * HEAD_HIDDEN).map(|_| u.sample(rng)).collect();
                WeightSource::Mlp {
                    w1: Tensor::new(vec![dim, HEAD_HIDDEN], w1)?,
                    b1: Tensor::zeros(&[HEAD_HIDDEN]),
                    w2: Tensor::zeros(&[HEAD_HIDDEN, k]),
                    b2: Tensor::zeros(&[k]),
                }
            }
        };
        Ok(GmmMarginal {
            k,
            dim,
            means: Tensor::new(vec![k, dim], means)?,
            log_stds: Tensor::zeros(&[k, dim]),
            weights,
        })
    }

    /// Mixture with explicit components and global logits.
    pub fn from_components(means: &[Vec<f64>], log_stds: &[Vec<f64>], logits: &[f64]) -> Result<Self> {
        let k = means.len();
        if k == 0 || log_stds.len() != k || logits.len() != k {
            return Err(Error::domain("gmm", "component lists must be nonempty and of equal length"));
        }
        let dim = means[0].len();
        let m = Tensor::from_rows(means)?;
        let s = Tensor::from_rows(log_stds)?;
        if m.shape() != [k, dim] || s.shape() != [k, dim] {
            return Err(Error::ShapeMismatch {
                op: "gmm",
                lhs: m.shape().to_vec(),
                rhs: s.shape().to_vec(),
            });
        }
        if !s.all_finite() {
            return Err(Error::domain("gmm", "log_stds must be finite"));
        }
        Ok(GmmMarginal {
            k,
            dim,
            means: m,
            log_stds: s,
            weights: WeightSource::Logits(Tensor::vector(logits.to_vec())),
        })
    }

    pub fn kind(&self) -> WeightKind {
        match self.weights {
            WeightSource::Logits(_) => WeightKind::Logits,
            WeightSource::Mlp { .. } => WeightKind::Mlp,
        }
    }

    pub fn component(&self, k: usize) -> DiagGaussian {
        DiagGaussian {
            mean: self.means.row(k).to_vec(),
            log_std: self.log_stds.row(k).to_vec(),
        }
    }

    /// Mixture weights; the MLP head needs a context embedding of length `D`.
    pub fn mixture_weights(&self, context: Option<&[f64]>) -> Result<Vec<f64>> {
        match &self.weights {
            WeightSource::Logits(l) => Ok(softmax(l.data())),
            WeightSource::Mlp { w1, b1, w2, b2 } => {
                let c = context.ok_or_else(|| Error::domain("mixture_weights", "MLP head needs a context"))?;
                if c.len() != self.dim {
                    return Err(Error::DimMismatch {
                        expected: self.dim,
                        got: c.len(),
                    });
                }
                let h: Vec<f64> = (0..HEAD_HIDDEN)
                    .map(|j| (b1.data()[j] + (0..self.dim).map(|i| c[i] * w1.at2(i, j)).sum::<f64>()).tanh())
                    .collect();
                let logits: Vec<f64> = (0..self.k)
                    .map(|k| b2.data()[k] + (0..HEAD_HIDDEN).map(|j| h[j] * w2.at2(j, k)).sum::<f64>())
                    .collect();
                Ok(softmax(&logits))
            }
        }
    }

    fn names(&self, prefix: &str) -> Vec<String> {
        let mut v = vec![format!("{prefix}.means"), format!("{prefix}.log_stds")];
        match self.kind() {
            WeightKind::Logits => v.push(format!("{prefix}.logits")),
            WeightKind::Mlp => {
                for s in ["head_w1", "head_b1", "head_w2", "head_b2"] {
                    v.push(format!("{prefix}.{s}"));
                }
            }
        }
        v
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.means, &self.log_stds];
        match &self.weights {
            WeightSource::Logits(l) => v.push(l),
            WeightSource::Mlp { w1, b1, w2, b2 } => v.extend([w1, b1, w2, b2]),
        }
        v
    }

    /// Adds every tensor to `params` under `prefix.<name>`.
    pub fn insert_params(&self, prefix: &str, params: &mut ParamSet) {
        for (name, t) in self.names(prefix).into_iter().zip(self.tensors()) {
            params.insert(name, t.clone());
        }
    }

    /// Reads back a mixture stored by [`insert_params`](Self::insert_params).
    pub fn from_params(prefix: &str, kind: WeightKind, params: &ParamSet) -> Result<Self> {
        let get = |s: &str| {
            params
                .get(&format!("{prefix}.{s}"))
                .cloned()
                .ok_or_else(|| Error::Config(format!("missing parameter {prefix}.{s}")))
        };
        let means = get("means")?;
        let log_stds = get("log_stds")?;
        if means.ndim() != 2 || means.shape() != log_stds.shape() {
            return Err(Error::ShapeMismatch {
                op: "gmm_from_params",
                lhs: means.shape().to_vec(),
                rhs: log_stds.shape().to_vec(),
            });
        }
        let (k, dim) = (means.rows(), means.cols());
        let weights = match kind {
            WeightKind::Logits => WeightSource::Logits(get("logits")?),
            WeightKind::Mlp => WeightSource::Mlp {
                w1: get("head_w1")?,
                b1: get("head_b1")?,
                w2: get("head_w2")?,
                b2: get("head_b2")?,
            },
        };
        Ok(GmmMarginal {
            k,
            dim,
            means,
            log_stds,
            weights,
        })
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check_inputs(z: &[f64], m: &GmmMarginal, pi: &[f64]) -> Result<()> {
    if z.len() != m.dim {
        return Err(Error::DimMismatch {
            expected: m.dim,
            got: z.len(),
        });
    }
    check_weights(m, pi)
}

fn check_weights(m: &GmmMarginal, pi: &[f64]) -> Result<()> {
    if pi.len() != m.k {
        return Err(Error::DimMismatch {
            expected: m.k,
            got: pi.len(),
        });
    }
    let s: f64 = pi.iter().sum();
    if pi.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::domain("gmm", format!("weights not on the simplex: {pi:?}")));
    }
    Ok(())
}

fn logsumexp(a: &[f64]) -> f64 {
    let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + a.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn gmm_log_density(z: &[f64], m: &GmmMarginal, pi: &[f64]) -> Result<f64> {
    check_inputs(z, m, pi)?;
    let mut terms = Vec::with_capacity(m.k);
    for (k, &p) in pi.iter().enumerate() {
        if p > 0.0 {
            terms.push(p.ln() + mvn_log_density(z, &m.component(k))?);
        }
    }
    Ok(logsumexp(&terms))
}

/// `Σ_k π_k Π_d Φ((z_d − μ_kd)/σ_kd)`, exact for diagonal components.
pub fn gmm_cdf(z: &[f64], m: &GmmMarginal, pi: &[f64]) -> Result<f64> {
    check_inputs(z, m, pi)?;
    let mut terms = Vec::with_capacity(m.k);
    for (k, &p) in pi.iter().enumerate() {
        if p > 0.0 {
            let mut acc = p.ln();
            for d in 0..m.dim {
                let s = (z[d] - m.means.at2(k, d)) * (-m.log_stds.at2(k, d)).exp();
                acc += std_normal_log_cdf(s);
            }
            terms.push(acc);
        }
    }
    Ok(logsumexp(&terms).exp().clamp(0.0, 1.0))
}

/// One draw: component from `pi`, then a Gaussian draw from it.
pub fn sample_one(m: &GmmMarginal, pi: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    let mut k = m.k - 1;
    for (i, &p) in pi.iter().enumerate() {
        acc += p;
        if r < acc {
            k = i;
            break;
        }
    }
    (0..m.dim)
        .map(|d| {
            let e: f64 = rng.sample(StandardNormal);
            m.means.at2(k, d) + m.log_stds.at2(k, d).exp() * e
        })
        .collect()
}

pub fn gmm_sample(m: &GmmMarginal, pi: &[f64], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::domain("gmm_sample", "n must be at least 1"));
    }
    check_weights(m, pi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| sample_one(m, pi, &mut rng)).collect())
}

/// One gradient-preserving draw from global `logits`, evaluated off-tape.
pub fn gmm_gps_sample(m: &GmmMarginal, logits: &[f64], tau: f64, seed: u64) -> Result<Vec<f64>> {
    if logits.len() != m.k {
        return Err(Error::DimMismatch {
            expected: m.k,
            got: logits.len(),
        });
    }
    let mut tape = Tape::new();
    let nodes = GmmNodes::leaves(&mut tape, m);
    let l = tape.leaf(Tensor::new(vec![1, m.k], logits.to_vec())?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = nodes.gps_sample(&mut tape, l, tau, &mut rng)?;
    Ok(tape.value(out).data().to_vec())
}

/// Tape variables of one mixture.
#[derive(Clone, Copy, Debug)]
pub struct GmmNodes {
    pub means: Var,
    pub log_stds: Var,
    pub weights: WeightNodes,
}

#[derive(Clone, Copy, Debug)]
pub enum WeightNodes {
    Logits(Var),
    Mlp { w1: Var, b1: Var, w2: Var, b2: Var },
}

impl GmmNodes {
    /// Registers every tensor of `m` as a fresh leaf.
    pub fn leaves(tape: &mut Tape, m: &GmmMarginal) -> Self {
        let means = tape.leaf(m.means.clone());
        let log_stds = tape.leaf(m.log_stds.clone());
        let weights = match &m.weights {
            WeightSource::Logits(l) => WeightNodes::Logits(tape.leaf(l.clone())),
            WeightSource::Mlp { w1, b1, w2, b2 } => WeightNodes::Mlp {
                w1: tape.leaf(w1.clone()),
                b1: tape.leaf(b1.clone()),
                w2: tape.leaf(w2.clone()),
                b2: tape.leaf(b2.clone()),
            },
        };
        GmmNodes {
            means,
            log_stds,
            weights,
        }
    }

    /// Looks the mixture up among named tape variables.
    pub fn from_vars(prefix: &str, kind: WeightKind, vars: &Vars) -> Result<Self> {
        let get = |s: &str| {
            vars.get(&format!("{prefix}.{s}"))
                .copied()
                .ok_or_else(|| Error::Config(format!("missing parameter {prefix}.{s}")))
        };
        let weights = match kind {
            WeightKind::Logits => WeightNodes::Logits(get("logits")?),
            WeightKind::Mlp => WeightNodes::Mlp {
                w1: get("head_w1")?,
                b1: get("head_b1")?,
                w2: get("head_w2")?,
                b2: get("head_b2")?,
            },
        };
        Ok(GmmNodes {
            means: get("means")?,
            log_stds: get("log_stds")?,
            weights,
        })
    }

    fn dims(&self, tape: &Tape) -> (usize, usize) {
        let s = tape.shape(self.means);
        (s[0], s[1])
    }

    /// Per-row log mixture weights `[n, K]`. Global logits ignore `context`;
    /// the MLP head reads it as an `[n, D]` embedding.
    pub fn log_weights(&self, tape: &mut Tape, n: usize, context: Option<Var>) -> Result<Var> {
        let (k, _) = self.dims(tape);
        match self.weights {
            WeightNodes::Logits(l) => {
                let lse = tape.logsumexp_axis(l, 0)?;
                let lw = tape.sub(l, lse)?;
                let lw = tape.reshape(lw, &[1, k])?;
                tape.broadcast(lw, &[n, k])
            }
            WeightNodes::Mlp { w1, b1, w2, b2 } => {
                let c = context.ok_or_else(|| Error::domain("log_weights", "MLP head needs a context"))?;
                if tape.shape(c)[0] != n {
                    return Err(Error::DimMismatch {
                        expected: n,
                        got: tape.shape(c)[0],
                    });
                }
                let a = tape.matmul(c, w1)?;
                let a = tape.add(a, b1)?;
                let h = tape.tanh(a)?;
                let o = tape.matmul(h, w2)?;
                let logits = tape.add(o, b2)?;
                log_softmax_rows(tape, logits)
            }
        }
    }

    /// Per-row mixture log-density of `z: [n, D]`, returned as `[n]`.
    pub fn log_density(&self, tape: &mut Tape, z: Var, log_w: Var) -> Result<Var> {
        let (k, d) = self.dims(tape);
        let n = check_rows(tape, z, d)?;
        let z3 = tape.reshape(z, &[n, 1, d])?;
        let mu = tape.reshape(self.means, &[1, k, d])?;
        let diff = tape.sub(z3, mu)?;
        let neg = tape.neg(self.log_stds)?;
        let inv = tape.exp(neg)?;
        let inv = tape.reshape(inv, &[1, k, d])?;
        let s = tape.mul(diff, inv)?;
        let sq = tape.square(s)?;
        let q = tape.sum_axis(sq, 2)?;
        let q = tape.scale(q, -0.5)?;
        let lsum = tape.sum_axis(self.log_stds, 1)?;
        let comp = tape.sub(q, lsum)?;
        let comp = tape.add_scalar(comp, -0.5 * d as f64 * LN_2PI)?;
        let a = tape.add(comp, log_w)?;
        tape.logsumexp_axis(a, 1)
    }

    /// Per-row `ln F(z)` of `z: [n, D]`, returned as `[n]`. Evaluated with a
    /// tail-stable `ln Φ` so deep lower-tail rows keep their gradient.
    pub fn log_cdf(&self, tape: &mut Tape, z: Var, log_w: Var) -> Result<Var> {
        let (k, d) = self.dims(tape);
        let n = check_rows(tape, z, d)?;
        let (zv, lw) = (tape.value(z), tape.value(log_w));
        let (mu, ls) = (tape.value(self.means), tape.value(self.log_stds));
        let mut value = Vec::with_capacity(n);
        let mut jz = vec![0.0; n * d];
        let mut jw = vec![0.0; n * k];
        let mut jm = vec![0.0; n * k * d];
        let mut js = vec![0.0; n * k * d];
        let mut s = vec![0.0; k * d];
        let mut a = vec![0.0; k];
        for i in 0..n {
            for c in 0..k {
                a[c] = lw.data()[i * k + c];
                for j in 0..d {
                    let x = (zv.data()[i * d + j] - mu.data()[c * d + j]) * (-ls.data()[c * d + j]).exp();
                    s[c * d + j] = x;
                    a[c] += std_normal_log_cdf(x);
                }
            }
            let y = logsumexp(&a);
            value.push(y);
            for c in 0..k {
                let r = (a[c] - y).exp();
                jw[i * k + c] = r;
                for j in 0..d {
                    let x = s[c * d + j];
                    let g = r * std_normal_inv_mills(x);
                    let inv = (-ls.data()[c * d + j]).exp();
                    jz[i * d + j] += g * inv;
                    jm[(i * k + c) * d + j] = -g * inv;
                    js[(i * k + c) * d + j] = -g * x;
                }
            }
        }
        let mu_flat = tape.reshape(self.means, &[k * d])?;
        let ls_flat = tape.reshape(self.log_stds, &[k * d])?;
        let f = RowFn {
            name: "gmm_log_cdf",
            value: Tensor::vector(value),
            jacobians: vec![
                Tensor::new(vec![n, d], jz)?,
                Tensor::new(vec![n, k], jw)?,
                Tensor::new(vec![n, k * d], jm)?,
                Tensor::new(vec![n, k * d], js)?,
            ],
            shared: vec![false, false, true, true],
        };
        tape.rows(f, &[z, log_w, mu_flat, ls_flat])
    }

    /// Per-row mixture CDF `[n]`.
    pub fn cdf(&self, tape: &mut Tape, z: Var, log_w: Var) -> Result<Var> {
        let l = self.log_cdf(tape, z, log_w)?;
        tape.exp(l)
    }

    /// Gradient-preserving draw for each row of `log_w: [n, K]`:
    /// `Σ_k w_k (μ_k + σ_k ⊙ ε_k)` with `w = softmax((log_w + Gumbel)/τ)`.
    pub fn gps_sample(&self, tape: &mut Tape, log_w: Var, tau: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::domain("gmm_gps_sample", format!("temperature {tau}")));
        }
        let (k, d) = self.dims(tape);
        let n = tape.shape(log_w)[0];
        if tape.shape(log_w) != [n, k] {
            return Err(Error::ShapeMismatch {
                op: "gmm_gps_sample",
                lhs: tape.shape(log_w).to_vec(),
                rhs: vec![n, k],
            });
        }
        let gumbel: Vec<f64> = (0..n * k).map(|_| -(-open_unit(rng).ln()).ln()).collect();
        let eps: Vec<f64> = (0..n * k * d).map(|_| rng.sample(StandardNormal)).collect();
        let g = tape.constant(Tensor::new(vec![n, k], gumbel)?);
        let pert = tape.add(log_w, g)?;
        let pert = tape.scale(pert, 1.0 / tau)?;
        let w = tape.softmax(pert)?;
        let w = tape.reshape(w, &[n, k, 1])?;
        let e = tape.constant(Tensor::new(vec![n, k, d], eps)?);
        let sd = tape.exp(self.log_stds)?;
        let sd = tape.reshape(sd, &[1, k, d])?;
        let noise = tape.mul(sd, e)?;
        let mu = tape.reshape(self.means, &[1, k, d])?;
        let comps = tape.add(mu, noise)?;
        let weighted = tape.mul(w, comps)?;
        tape.sum_axis(weighted, 1)
    }
}

fn open_unit(rng: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn check_rows(tape: &Tape, z: Var, d: usize) -> Result<usize> {
    let s = tape.shape(z);
    if s.len() != 2 || s[1] != d {
        return Err(Error::DimMismatch {
            expected: d,
            got: s.last().copied().unwrap_or(0),
        });
    }
    Ok(s[0])
}

/// Row-wise `x − logsumexp(x)` of an `[n, K]` node.
pub fn log_softmax_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    let n = tape.shape(x)[0];
    let lse = tape.logsumexp_axis(x, 1)?;
    let lse = tape.reshape(lse, &[n, 1])?;
    tape.sub(x, lse)
}

/// Full-batch maximum-likelihood fit by Adam. Returns the final mean
/// log-likelihood.
pub fn fit_gmm(m: &mut GmmMarginal, data: &[Vec<f64>], steps: usize, lr: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::DegenerateBatch(0));
    }
    let x = Tensor::from_rows(data)?;
    if x.cols() != m.dim {
        return Err(Error::DimMismatch {
            expected: m.dim,
            got: x.cols(),
        });
    }
    let kind = m.kind();
    let mut params = ParamSet::new();
    m.insert_params("gmm", &mut params);
    let mut state = OptimizerState::default();
    let mut last = f64::NAN;
    for _ in 0..steps {
        let mut tape = Tape::new();
        let vars = tape_leaves(&mut tape, &params);
        let nodes = GmmNodes::from_vars("gmm", kind, &vars)?;
        let z = tape.constant(x.clone());
        let lw = nodes.log_weights(&mut tape, x.rows(), Some(z))?;
        let ll = nodes.log_density(&mut tape, z, lw)?;
        let mean = tape.mean(ll)?;
        last = tape.value(mean).item();
        let loss = tape.neg(mean)?;
        let grads = tape.backward(loss)?;
        let g = collect_grads(&grads, &tape, &vars);
        adam_step(&mut params, &g, &mut state, Adam::new(lr))?;
    }
    *m = GmmMarginal::from_params("gmm", kind, &params)?;
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;

    fn random_gmm(k: usize, d: usize, seed: u64) -> (GmmMarginal, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let ls: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-0.7..0.5)).collect()).collect();
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = GmmMarginal::from_components(&means, &ls, &logits).unwrap();
        let pi = m.mixture_weights(None).unwrap();
        (m, pi)
    }

    #[test]
    fn single_component_reduces_to_gaussian() {
        let m = GmmMarginal::from_components(&[vec![0.3, -1.0]], &[vec![0.2, -0.4]], &[0.0]).unwrap();
        let z = [1.0, -0.5];
        assert_eq!(
            gmm_log_density(&z, &m, &[1.0]).unwrap(),
            mvn_log_density(&z, &m.component(0)).unwrap()
        );
        let twin = GmmMarginal::from_components(&[vec![0.3, -1.0], vec![0.3, -1.0]], &[vec![0.2, -0.4], vec![0.2, -0.4]], &[0.0, 0.0]).unwrap();
        let a = gmm_log_density(&z, &twin, &[0.5, 0.5]).unwrap();
        assert!((a - gmm_log_density(&z, &m, &[1.0]).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn log_density_matches_naive_sum() {
        let (m, pi) = random_gmm(3, 2, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let z: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let naive: f64 = (0..3)
                .map(|k| {
                    let g = m.component(k);
                    let mut p = pi[k];
                    for d in 0..2 {
                        let sd = g.log_std[d].exp();
                        let x = (z[d] - g.mean[d]) / sd;
                        p *= (-0.5 * x * x).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
                    }
                    p
                })
                .sum();
            let got = gmm_log_density(&z, &m, &pi).unwrap();
            assert!((got - naive.ln()).abs() < 1e-12 * naive.ln().abs().max(1.0));
        }
    }

    #[test]
    fn cdf_limits_and_median() {
        let (m, pi) = random_gmm(4, 3, 5);
        assert!((gmm_cdf(&[50.0; 3], &m, &pi).unwrap() - 1.0).abs() < 1e-9);
        assert!(gmm_cdf(&[-50.0; 3], &m, &pi).unwrap() < 1e-9);
        let one = GmmMarginal::from_components(&[vec![0.7]], &[vec![0.3]], &[0.0]).unwrap();
        assert!((gmm_cdf(&[0.7], &one, &[1.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cdf_matches_monte_carlo() {
        let (m, pi) = random_gmm(2, 2, 21);
        let z = [0.3, -0.2];
        let n = 1_000_000;
        let draws = gmm_sample(&m, &pi, n, 4).unwrap();
        let hits = draws.iter().filter(|x| x[0] <= z[0] && x[1] <= z[1]).count() as f64 / n as f64;
        let p = gmm_cdf(&z, &m, &pi).unwrap();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits - p).abs() < 3.0 * se, "{hits} vs {p}");
    }

    #[test]
    fn cdf_coordinate_monotone() {
        let (m, pi) = random_gmm(3, 2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let z: Vec<f64> = (0..2).map(|_| rng.random_range(-4.0..4.0)).collect();
            let zp: Vec<f64> = z.iter().map(|x| x + rng.random_range(0.0..2.0)).collect();
            assert!(gmm_cdf(&zp, &m, &pi).unwrap() >= gmm_cdf(&z, &m, &pi).unwrap());
        }
    }

    #[test]
    fn density_integrates_to_one() {
        for (k, d, seed) in [(1, 1, 1), (3, 2, 2), (6, 4, 3)] {
            let (m, pi) = random_gmm(k, d, seed);
            // importance sampling from a wide Gaussian proposal
            let q = DiagGaussian::new(vec![0.0; d], vec![(3.0f64).ln(); d]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let n = 1_000_000;
            let mut acc = 0.0;
            for _ in 0..n {
                let x: Vec<f64> = (0..d).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
                acc += (gmm_log_density(&x, &m, &pi).unwrap() - mvn_log_density(&x, &q).unwrap()).exp();
            }
            let mass = acc / n as f64;
            assert!((mass - 1.0).abs() < 0.01, "K={k} D={d}: {mass}");
        }
    }

    #[test]
    fn sampling_moments_and_determinism() {
        let m = GmmMarginal::from_components(&[vec![-2.0], vec![2.0]], &[vec![0.0], vec![0.0]], &[0.0, 0.0]).unwrap();
        let s = gmm_sample(&m, &[0.5, 0.5], 100_000, 3).unwrap();
        let mean = s.iter().map(|x| x[0]).sum::<f64>() / s.len() as f64;
        assert!(mean.abs() < 0.05);
        assert_eq!(s, gmm_sample(&m, &[0.5, 0.5], 100_000, 3).unwrap());
        let tight = GmmMarginal::from_components(&[vec![1.5, -0.5]], &[vec![-800.0, -800.0]], &[0.0]).unwrap();
        for x in gmm_sample(&tight, &[1.0], 10, 0).unwrap() {
            assert_eq!(x, vec![1.5, -0.5]);
        }
    }

    #[test]
    fn tape_matches_plain_functions() {
        let (m, pi) = random_gmm(3, 4, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random_range(-6.0..3.0)).collect()).collect();
        let mut tape = Tape::new();
        let nodes = GmmNodes::leaves(&mut tape, &m);
        let z = tape.constant(Tensor::from_rows(&rows).unwrap());
        let lw = nodes.log_weights(&mut tape, 5, None).unwrap();
        let ld = nodes.log_density(&mut tape, z, lw).unwrap();
        let cdf = nodes.cdf(&mut tape, z, lw).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let a = gmm_log_density(r, &m, &pi).unwrap();
            assert!((tape.value(ld).data()[i] - a).abs() < 1e-12 * a.abs().max(1.0));
            let c = gmm_cdf(r, &m, &pi).unwrap();
            assert!((tape.value(cdf).data()[i] - c).abs() < 1e-12 * c.max(1e-300));
        }
    }

    fn flat(m: &GmmMarginal) -> Vec<f64> {
        m.tensors().iter().flat_map(|t| t.data().to_vec()).collect()
    }

    fn unflat(m: &GmmMarginal, tape: &mut Tape, x: Var) -> GmmNodes {
        let mut off = 0;
        let mut take = |tape: &mut Tape, shape: &[usize]| {
            let len: usize = shape.iter().product();
            let s = tape.slice(x, 0, off, off + len).unwrap();
            off += len;
            tape.reshape(s, shape).unwrap()
        };
        let means = take(tape, &[m.k, m.dim]);
        let log_stds = take(tape, &[m.k, m.dim]);
        let weights = match &m.weights {
            WeightSource::Logits(_) => WeightNodes::Logits(take(tape, &[m.k])),
            WeightSource::Mlp { .. } => WeightNodes::Mlp {
                w1: take(tape, &[m.dim, HEAD_HIDDEN]),
                b1: take(tape, &[HEAD_HIDDEN]),
                w2: take(tape, &[HEAD_HIDDEN, m.k]),
                b2: take(tape, &[m.k]),
            },
        };
        GmmNodes {
            means,
            log_stds,
            weights,
        }
    }

    #[test]
    fn log_density_and_cdf_gradients() {
        let (m, _) = random_gmm(3, 2, 41);
        let rows = vec![vec![0.4, -1.1], vec![-2.5, 0.9], vec![-7.0, -6.0]];
        let z = Tensor::from_rows(&rows).unwrap();
        let err = finite_diff_check(
            |t, x| {
                let nodes = unflat(&m, t, x);
                let zc = t.constant(z.clone());
                let lw = nodes.log_weights(t, 3, None)?;
                let a = nodes.log_density(t, zc, lw)?;
                let b = nodes.log_cdf(t, zc, lw)?;
                let s = t.add(a, b)?;
                t.sum(s)
            },
            &flat(&m),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
        // gradient in the evaluation point
        let err = finite_diff_check(
            |t, x| {
                let nodes = GmmNodes::leaves(t, &m);
                let zr = t.reshape(x, &[3, 2])?;
                let lw = nodes.log_weights(t, 3, None)?;
                let c = nodes.cdf(t, zr, lw)?;
                let l = nodes.log_density(t, zr, lw)?;
                let s = t.add(c, l)?;
                t.sum(s)
            },
            z.data(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn mlp_head_gradients_and_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = GmmMarginal::init(3, 2, WeightKind::Mlp, &mut rng).unwrap();
        if let WeightSource::Mlp { w2, .. } = &mut m.weights {
            for v in w2.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let ctx = [0.3, -0.8];
        let pi = m.mixture_weights(Some(&ctx)).unwrap();
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut tape = Tape::new();
        let nodes = GmmNodes::leaves(&mut tape, &m);
        let c = tape.constant(Tensor::new(vec![1, 2], ctx.to_vec()).unwrap());
        let lw = nodes.log_weights(&mut tape, 1, Some(c)).unwrap();
        for (a, b) in tape.value(lw).data().iter().zip(&pi) {
            assert!((a.exp() - b).abs() < 1e-14);
        }
        let z = Tensor::new(vec![2, 2], vec![0.1, 0.2, -1.0, 0.5]).unwrap();
        let err = finite_diff_check(
            |t, x| {
                let nodes = unflat(&m, t, x);
                let zc = t.constant(z.clone());
                let lw = nodes.log_weights(t, 2, Some(zc))?;
                let a = nodes.log_density(t, zc, lw)?;
                t.sum(a)
            },
            &flat(&m),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
        assert!(m.mixture_weights(None).is_err());
    }

    #[test]
    fn gps_single_component_and_saturation() {
        let m = GmmMarginal::from_components(&[vec![1.0, -1.0]], &[vec![0.5, -0.5]], &[0.0]).unwrap();
        let a = gmm_gps_sample(&m, &[0.0], 0.01, 5).unwrap();
        let b = gmm_gps_sample(&m, &[0.0], 10.0, 5).unwrap();
        assert_eq!(a, b);
        // same noise, reproduced off-tape
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let _g = open_unit(&mut rng);
        let e: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
        assert!((a[0] - (1.0 + 0.5f64.exp() * e[0])).abs() < 1e-14);
        assert!((a[1] - (-1.0 + (-0.5f64).exp() * e[1])).abs() < 1e-14);

        let two = GmmMarginal::from_components(&[vec![-3.0], vec![3.0]], &[vec![-1.0], vec![-1.0]], &[0.0, 0.0]).unwrap();
        let hard = gmm_gps_sample(&two, &[0.0, 0.0], 1e-4, 17).unwrap()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g: Vec<f64> = (0..2).map(|_| -(-open_unit(&mut rng).ln()).ln()).collect();
        let e: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
        let k = if g[0] > g[1] { 0 } else { 1 };
        let expect = [-3.0, 3.0][k] + (-1.0f64).exp() * e[k];
        assert!((hard - expect).abs() < 1e-9);
        assert!(matches!(gmm_gps_sample(&two, &[0.0, 0.0], 0.0, 1), Err(Error::Domain { .. })));
    }

    #[test]
    fn gps_gradient_in_means() {
        let (m, _) = random_gmm(3, 2, 51);
        let logits = [0.2, -0.3, 0.5];
        let ls = m.log_stds.clone();
        let err = finite_diff_check(
            |t, x| {
                let means = t.reshape(x, &[3, 2])?;
                let log_stds = t.constant(ls.clone());
                let l = t.constant(Tensor::vector(logits.to_vec()));
                let nodes = GmmNodes {
                    means,
                    log_stds,
                    weights: WeightNodes::Logits(l),
                };
                let lw = nodes.log_weights(t, 4, None)?;
                let mut rng = ChaCha8Rng::seed_from_u64(3);
                let s = nodes.gps_sample(t, lw, 0.5, &mut rng)?;
                let sq = t.square(s)?;
                t.mean(sq)
            },
            m.means.data(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [WeightKind::Logits, WeightKind::Mlp] {
            let m = GmmMarginal::init(DEFAULT_K, 4, kind, &mut rng).unwrap();
            let mut p = ParamSet::new();
            m.insert_params("gmm0", &mut p);
            assert_eq!(GmmMarginal::from_params("gmm0", kind, &p).unwrap(), m);
        }
    }

    #[test]
    fn fit_recovers_separated_components() {
        let truth = GmmMarginal::from_components(&[vec![-2.0, 1.0], vec![2.0, -1.0]], &[vec![-0.5, -0.5], vec![-0.5, -0.5]], &[0.0, 0.0]).unwrap();
        let data = gmm_sample(&truth, &[0.5, 0.5], 2000, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = GmmMarginal::init(2, 2, WeightKind::Logits, &mut rng).unwrap();
        let before: f64 = data.iter().map(|z| gmm_log_density(z, &m, &m.mixture_weights(None).unwrap()).unwrap()).sum::<f64>() / 2000.0;
        let after = fit_gmm(&mut m, &data, 400, 0.05).unwrap();
        let oracle: f64 = data.iter().map(|z| gmm_log_density(z, &truth, &[0.5, 0.5]).unwrap()).sum::<f64>() / 2000.0;
        assert!(after > before);
        assert!(after > oracle - 0.05, "{after} vs {oracle}");
    }
}
