//! Adam with bias correction over named parameter tensors.

use indexmap::IndexMap;

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named parameter tensors in a fixed insertion order.
pub type ParamSet = IndexMap<String, Tensor>;

/// Tape variables keyed like a [`ParamSet`].
pub type Vars = IndexMap<String, Var>;

/// Registers every parameter as a leaf, in order.
pub fn tape_leaves(tape: &mut Tape, params: &ParamSet) -> Vars {
    params.iter().map(|(k, t)| (k.clone(), tape.leaf(t.clone()))).collect()
}

/// Gradients of every registered parameter, zero-filled when unused.
pub fn collect_grads(grads: &Gradients, tape: &Tape, vars: &Vars) -> ParamSet {
    vars.iter().map(|(k, &v)| (k.clone(), grads.wrt(tape, v))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators keyed like the parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

/// One bias-corrected Adam update of every parameter that has a gradient.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut OptimizerState, cfg: Adam) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::domain("adam_step", format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        for (((pi, mi), vi), gi) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
