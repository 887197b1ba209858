//! Training objective: task loss plus an alignment term over modality
//! embeddings (copula likelihood, or the cosine and KL baselines).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::copula::{log_density_on_tape, Family};
use crate::error::{Error, Result};
use crate::gmm::{GmmNodes, WeightNodes};

/// Probability clamp inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;
/// Variance floor for the batch Gaussian fits of the KL baseline.
pub const VAR_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentKind {
    #[default]
    Copula,
    Cosine,
    Kl,
    None,
}

impl AlignmentKind {
    pub fn name(self) -> &'static str {
        match self {
            AlignmentKind::Copula => "copula",
            AlignmentKind::Cosine => "cosine",
            AlignmentKind::Kl => "kl",
            AlignmentKind::None => "none",
        }
    }
}

impl std::str::FromStr for AlignmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "copula" => Ok(AlignmentKind::Copula),
            "cosine" => Ok(AlignmentKind::Cosine),
            "kl" => Ok(AlignmentKind::Kl),
            "none" => Ok(AlignmentKind::None),
            other => Err(Error::Config(format!("unknown alignment kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda_cop: f64,
    pub alignment: AlignmentKind,
    pub family: Family,
    /// Use `log c + Σ log f` (the joint log-likelihood) instead of `log c − Σ log f`.
    pub joint_nll: bool,
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cop >= 0.0) || !self.lambda_cop.is_finite() {
            return Err(Error::Config(format!("lambda_cop must be nonnegative, got {}", self.lambda_cop)));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy of `y_hat: [n]` against labels, with `ŷ`
/// clamped to `[BCE_EPS, 1 − BCE_EPS]`.
pub fn bce_loss(tape: &mut Tape, y_hat: Var, y: &[f64]) -> Result<Var> {
    let n = tape.value(y_hat).len();
    if n != y.len() {
        return Err(Error::LengthMismatch(n, y.len()));
    }
    let p = tape.clamp(y_hat, BCE_EPS, 1.0 - BCE_EPS)?;
    let lp = tape.log(p)?;
    let q = tape.neg(p)?;
    let q = tape.add_scalar(q, 1.0)?;
    let lq = tape.log(q)?;
    let yt = tape.constant(Tensor::new(vec![n], y.to_vec())?);
    let ny = tape.constant(Tensor::new(vec![n], y.iter().map(|v| 1.0 - v).collect())?);
    let a = tape.mul(yt, lp)?;
    let b = tape.mul(ny, lq)?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s)?;
    tape.neg(m)
}

/// Plain-value cross-entropy with the same clamp.
pub fn bce_value(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::LengthMismatch(y_hat.len(), y.len()));
    }
    let s: f64 = y_hat
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    Ok(-s / y.len() as f64)
}

/// `Σ_i [log c(F_1(z_1ⁱ), …, F_M(z_Mⁱ)) − Σ_m log f_m(z_mⁱ)]`, or with `+`
/// when `joint_nll` is set. `z[m]` is `[n, d]`; `copula_raw` is `[P]`.
pub fn copula_alignment_term(
    tape: &mut Tape,
    z: &[Var],
    gmms: &[GmmNodes],
    family: Family,
    copula_raw: Var,
    joint_nll: bool,
) -> Result<Var> {
    let m = z.len();
    if gmms.len() != m || m == 0 {
        return Err(Error::DimMismatch {
            expected: m,
            got: gmms.len(),
        });
    }
    let n = tape.shape(z[0])[0];
    let mut cols = Vec::with_capacity(m);
    let mut log_f = None;
    for (zm, g) in z.iter().zip(gmms) {
        let ctx = matches!(g.weights, WeightNodes::Mlp { .. }).then_some(*zm);
        let lw = g.log_weights(tape, n, ctx)?;
        let u = g.cdf(tape, *zm, lw)?;
        cols.push(tape.reshape(u, &[n, 1])?);
        let lf = g.log_density(tape, *zm, lw)?;
        log_f = Some(match log_f {
            Some(acc) => tape.add(acc, lf)?,
            None => lf,
        });
    }
    let u = tape.concat(&cols, 1)?;
    let log_c = log_density_on_tape(tape, family, m, copula_raw, u)?;
    let log_f = log_f.expect("at least one modality");
    let per_row = if joint_nll {
        tape.add(log_c, log_f)?
    } else {
        tape.sub(log_c, log_f)?
    };
    tape.sum(per_row)
}

/// `−λ · alignment + bce`, the quantity the trainer minimizes.
pub fn elbo(tape: &mut Tape, bce: Var, alignment: Var, lambda_cop: f64) -> Result<Var> {
    let r = tape.scale(alignment, -lambda_cop)?;
    tape.add(r, bce)
}

fn pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect()
}

fn mean_over_pairs(tape: &mut Tape, terms: Vec<Var>) -> Result<Var> {
    let k = terms.len() as f64;
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    tape.scale(acc, 1.0 / k)
}

/// Mean over rows of `1 − cos(a, b)`, averaged over modality pairs.
pub fn cosine_alignment_loss(tape: &mut Tape, z: &[Var]) -> Result<Var> {
    if z.len() < 2 {
        return Err(Error::DimMismatch { expected: 2, got: z.len() });
    }
    let mut norms = Vec::with_capacity(z.len());
    for &v in z {
        let sq = tape.square(v)?;
        let s = tape.sum_axis(sq, 1)?;
        if tape.value(s).data().iter().any(|&x| x == 0.0) {
            return Err(Error::ZeroVector);
        }
        norms.push(tape.powf(s, 0.5)?);
    }
    let mut terms = Vec::new();
    for (a, b) in pairs(z.len()) {
        let prod = tape.mul(z[a], z[b])?;
        let dot = tape.sum_axis(prod, 1)?;
        let nn = tape.mul(norms[a], norms[b])?;
        let cos = tape.div(dot, nn)?;
        let mc = tape.mean(cos)?;
        let neg = tape.neg(mc)?;
        terms.push(tape.add_scalar(neg, 1.0)?);
    }
    mean_over_pairs(tape, terms)
}

/// Symmetrized KL, `KL(a‖b) + KL(b‖a)`, between diagonal Gaussians fitted to
/// each modality's batch embeddings, averaged over modality pairs.
pub fn kl_alignment_loss(tape: &mut Tape, z: &[Var]) -> Result<Var> {
    if z.len() < 2 {
        return Err(Error::DimMismatch { expected: 2, got: z.len() });
    }
    let n = tape.shape(z[0])[0];
    if n < 2 {
        return Err(Error::DegenerateBatch(n));
    }
    let mut fits = Vec::with_capacity(z.len());
    for &v in z {
        let mu = tape.mean_axis(v, 0)?;
        let c = tape.sub(v, mu)?;
        let sq = tape.square(c)?;
        let var = tape.mean_axis(sq, 0)?;
        let var = tape.clamp(var, VAR_FLOOR, f64::INFINITY)?;
        fits.push((mu, var));
    }
    let mut terms = Vec::new();
    for (a, b) in pairs(z.len()) {
        let (ma, va) = fits[a];
        let (mb, vb) = fits[b];
        // KL(a‖b) + KL(b‖a) = ½ Σ [va/vb + vb/va − 2 + (ma − mb)² (1/va + 1/vb)]
        let r1 = tape.div(va, vb)?;
        let r2 = tape.div(vb, va)?;
        let dm = tape.sub(ma, mb)?;
        let dm2 = tape.square(dm)?;
        let ia = tape.powf(va, -1.0)?;
        let ib = tape.powf(vb, -1.0)?;
        let inv = tape.add(ia, ib)?;
        let q = tape.mul(dm2, inv)?;
        let s = tape.add(r1, r2)?;
        let s = tape.add(s, q)?;
        let s = tape.add_scalar(s, -2.0)?;
        let t = tape.sum(s)?;
        terms.push(tape.scale(t, 0.5)?);
    }
    mean_over_pairs(tape, terms)
}

/// Cosine or KL baseline by kind.
pub fn baseline_alignment_loss(tape: &mut Tape, kind: AlignmentKind, z: &[Var]) -> Result<Var> {
    match kind {
        AlignmentKind::Cosine => cosine_alignment_loss(tape, z),
        AlignmentKind::Kl => kl_alignment_loss(tape, z),
        other => Err(Error::Config(format!("{} is not a baseline alignment loss", other.name()))),
    }
}
