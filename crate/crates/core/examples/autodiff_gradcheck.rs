//! Reverse-mode gradients on the tape checked against finite differences,
//! including the Gumbel copula log-density in its raw parameter.
use cmcm::autodiff::{finite_diff_check, Tape, Tensor, Var};
use cmcm::copula::{log_density_on_tape, Family};

fn main() -> cmcm::Result<()> {
    // f(x) = sum(softmax(tanh(A x)) * log(1 + x^2))
    let a = Tensor::new(vec![3, 3], vec![0.5, -1.0, 0.3, 0.2, 0.8, -0.4, 1.1, 0.1, 0.7])?;
    let f = |t: &mut Tape, x: Var| {
        let a = t.constant(a.clone());
        let col = t.reshape(x, &[3, 1])?;
        let ax = t.matmul(a, col)?;
        let h = t.tanh(ax)?;
        let h = t.reshape(h, &[1, 3])?;
        let s = t.softmax(h)?;
        let sq = t.square(x)?;
        let one = t.constant(Tensor::new(vec![3], vec![1.0; 3])?);
        let p = t.add(sq, one)?;
        let l = t.log(p)?;
        let l = t.reshape(l, &[1, 3])?;
        let prod = t.mul(s, l)?;
        t.sum(prod)
    };
    let x = [0.3, -1.2, 0.8];
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::new(vec![3], x.to_vec())?);
    let y = f(&mut tape, xv)?;
    let g = tape.backward(y)?;
    println!("f(x) = {:.6}, grad = {:.6?}", tape.value(y).data()[0], g.wrt(&tape, xv).data());
    println!("max rel err vs central differences: {:.2e}", finite_diff_check(f, &x, 1e-6)?);

    let gumbel = |t: &mut Tape, v: Var| {
        let raw = t.slice(v, 0, 0, 1)?;
        let u = t.slice(v, 0, 1, 3)?;
        let u = t.reshape(u, &[1, 2])?;
        let ld = log_density_on_tape(t, Family::Gumbel, 2, raw, u)?;
        t.sum(ld)
    };
    println!(
        "gumbel log c: max rel err {:.2e}",
        finite_diff_check(gumbel, &[0.4, 0.25, 0.6], 1e-6)?
    );
    Ok(())
}
