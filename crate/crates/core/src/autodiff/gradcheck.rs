use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Value and gradient of a scalar graph built by `f` around a vector leaf `x`.
pub fn tape_gradient<F>(f: &F, x: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(Tensor::vector(x.to_vec()));
    let out = f(&mut tape, leaf)?;
    let value = tape.value(out).item();
    let grads = tape.backward(out)?;
    Ok((value, grads.wrt(&tape, leaf).into_data()))
}

fn evaluate<F>(f: &F, x: &[f64]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(Tensor::vector(x.to_vec()));
    let out = f(&mut tape, leaf).map_err(|e| Error::Evaluation(e.to_string()))?;
    Ok(tape.value(out).item())
}

/// Max over coordinates of `|analytic − central difference| / max(|analytic|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, x: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::domain("finite_diff_check", format!("eps = {eps}")));
    }
    let (_, analytic) = tape_gradient(&f, x).map_err(|e| Error::Evaluation(e.to_string()))?;
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = evaluate(&f, &probe)?;
        probe[i] = x[i] - eps;
        let down = evaluate(&f, &probe)?;
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Same metric as [`finite_diff_check`] against the five-point stencil
/// `(f(x−2h) − 8f(x−h) + 8f(x+h) − f(x+2h)) / 12h`. The `O(h⁴)` truncation
/// allows a wider step, which keeps rounding noise far below tiny gradients
/// of deep compositions.
pub fn finite_diff_check_5pt<F>(f: F, x: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::domain("finite_diff_check", format!("h = {h}")));
    }
    let (_, analytic) = tape_gradient(&f, x).map_err(|e| Error::Evaluation(e.to_string()))?;
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let mut at = |k: f64| -> Result<f64> {
            probe[i] = x[i] + k * h;
            let v = evaluate(&f, &probe);
            probe[i] = x[i];
            v
        };
        let numeric = (at(-2.0)? - 8.0 * at(-1.0)? + 8.0 * at(1.0)? - at(2.0)?) / (12.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
