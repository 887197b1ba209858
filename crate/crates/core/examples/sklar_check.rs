//! Joint density of a Gaussian copula with normal margins equals the
//! bivariate normal density it was built from.
use cmcm::copula::Copula;
use cmcm::stats::{std_normal_cdf, std_normal_pdf, LN_2PI};

fn main() -> cmcm::Result<()> {
    let rho = 0.6;
    let c = Copula::gaussian(rho)?;
    for (x, y) in [(0.0, 0.0), (1.0, -0.5), (-1.5, -1.2), (2.0, 1.8)] {
        let sklar = c.density(&[std_normal_cdf(x), std_normal_cdf(y)])? * std_normal_pdf(x) * std_normal_pdf(y);
        let det = 1.0 - rho * rho;
        let q = (x * x - 2.0 * rho * x * y + y * y) / det;
        let direct = (-0.5 * q - LN_2PI - 0.5 * det.ln()).exp();
        println!("({x:>4}, {y:>4})  sklar {sklar:.12e}  direct {direct:.12e}  rel {:.1e}", (sklar / direct - 1.0).abs());
    }
    Ok(())
}
