use rand::Rng;
use rand_distr::{Distribution as _, Normal};

use super::{Form, RingContext, RingError, RingPoly};

/// Coefficient distributions used for secrets, errors and masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    /// Independent uniform residue per prime.
    Uniform,
    /// Coefficients uniform over {-1, 0, 1}.
    Ternary,
    /// Rounded gaussian with standard deviation `sigma`, tail-cut at 6 sigma.
    Gaussian(f64),
}

/// Signed coefficients for the small distributions. `Uniform` has no signed
/// form and panics.
pub fn sample_signed<R: Rng + ?Sized>(n: usize, kind: Distribution, rng: &mut R) -> Vec<i64> {
    match kind {
        Distribution::Ternary => (0..n).map(|_| rng.random_range(-1i64..=1)).collect(),
        Distribution::Gaussian(sigma) => {
            assert!(sigma > 0.0, "gaussian sigma must be positive");
            let normal = Normal::new(0.0, sigma).unwrap();
            let bound = 6.0 * sigma;
            (0..n)
                .map(|_| loop {
                    let x: f64 = normal.sample(rng);
                    if x.abs() <= bound {
                        break x.round() as i64;
                    }
                })
                .collect()
        }
        Distribution::Uniform => panic!("uniform residues have no signed representation"),
    }
}

/// Draws a coefficient-form polynomial at `level`. Deterministic for a given
/// rng state.
pub fn sample<R: Rng + ?Sized>(
    ctx: &RingContext,
    kind: Distribution,
    level: usize,
    rng: &mut R,
) -> Result<RingPoly, RingError> {
    match kind {
        Distribution::Uniform => {
            let mut p = ctx.zero(level, Form::Coefficient)?;
            for (i, r) in p.residues.iter_mut().enumerate() {
                let q = ctx.modulus(i).value();
                for x in r.iter_mut() {
                    *x = rng.random_range(0..q);
                }
            }
            Ok(p)
        }
        _ => ctx.from_signed(&sample_signed(ctx.degree(), kind, rng), level),
    }
}
