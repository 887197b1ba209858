use super::Copula;
use crate::error::{Error, Result};
use crate::fmt::g9;

pub const GRID_N: usize = 101;
pub const GRID_LO: f64 = 0.005;
pub const GRID_HI: f64 = 0.995;

/// Density on the `GRID_N × GRID_N` uniform grid over `[GRID_LO, GRID_HI]²`,
/// as `(u, v, density)` with `u` varying slowest.
pub fn density_grid(c: &Copula) -> Result<Vec<(f64, f64, f64)>> {
    if c.dim != 2 {
        return Err(Error::UnsupportedDim {
            family: c.family().name(),
            op: "density_grid",
            dim: c.dim,
        });
    }
    let step = (GRID_HI - GRID_LO) / (GRID_N - 1) as f64;
    let at = |i: usize| GRID_LO + i as f64 * step;
    let mut out = Vec::with_capacity(GRID_N * GRID_N);
    for i in 0..GRID_N {
        for j in 0..GRID_N {
            let (u, v) = (at(i), at(j));
            out.push((u, v, c.density(&[u, v])?));
        }
    }
    Ok(out)
}

/// CSV text with header `u,v,density` and 9 significant digits.
pub fn density_grid_csv(c: &Copula) -> Result<String> {
    let mut s = String::from("u,v,density\n");
    for (u, v, d) in density_grid(c)? {
        s.push_str(&format!("{},{},{}\n", g9(u), g9(v), g9(d)));
    }
    Ok(s)
}
