//! Empirical structural constants: strong monotonicity `c`, Lipschitz `L`
//! and the one-sided monotonicity defect `gamma`.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LinearEllipticOperator, Nonlinearity, Operator};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, Mesh, NormTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstantsMethod {
    /// Extreme generalized eigenvalues, exact up to rounding.
    Eig,
    /// Extrema over seeded random pairs; empirical bounds only.
    Sampled,
}

impl fmt::Display for ConstantsMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Eig => f.write_str("eig"),
            Self::Sampled => f.write_str("sampled"),
        }
    }
}

/// Structural constants of an operator in a given norm.
///
/// For a composite `A + N`, `c` and the linear share of `lipschitz` come from
/// `A`, `gamma` and `lipschitz_nonlinear` from `N`, and `lipschitz` is the
/// total `L_A + L_N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorConstants {
    pub c: f64,
    pub lipschitz: f64,
    pub gamma: f64,
    pub lipschitz_nonlinear: f64,
    pub norm: NormTag,
    pub method: ConstantsMethod,
}

impl OperatorConstants {
    /// Lipschitz constant of the linear (monotone) part.
    pub fn lipschitz_linear(&self) -> f64 {
        self.lipschitz - self.lipschitz_nonlinear
    }

    pub const CSV_HEADER: &'static str = "c,L,gamma,norm_tag,method";

    pub fn csv_row(&self) -> String {
        use crate::grid::format_real;
        format!(
            "{},{},{},{},{}",
            format_real(self.c),
            format_real(self.lipschitz),
            format_real(self.gamma),
            self.norm,
            self.method
        )
    }
}

/// Estimates `c`, `L`, `gamma` of `op` in the `tag` norm.
///
/// Linear operators use the extreme generalized eigenvalues of
/// `⟨Au, u⟩ / ‖u‖²`. Anything nonlinear is sampled over `trials` random
/// pairs drawn from a stream seeded by `seed`.
pub fn estimate_constants(
    op: &Operator,
    tag: NormTag,
    trials: usize,
    seed: u64,
) -> Result<OperatorConstants> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    if let Some(lin) = op.linear_form() {
        let (c, l) = rayleigh_extremes(&lin, tag)?;
        return Ok(OperatorConstants {
            c,
            lipschitz: l,
            gamma: 0.0,
            lipschitz_nonlinear: 0.0,
            norm: tag,
            method: ConstantsMethod::Eig,
        });
    }
    if let Some((lin, nonlinearity)) = op.composite_parts() {
        let (c, l_a) = rayleigh_extremes(&lin, tag)?;
        let (gamma, l_n) = sample_nonlinearity(&nonlinearity, lin.mesh(), tag, trials, seed);
        return Ok(OperatorConstants {
            c,
            lipschitz: l_a + l_n,
            gamma,
            lipschitz_nonlinear: l_n,
            norm: tag,
            method: ConstantsMethod::Sampled,
        });
    }
    let mesh = *op.mesh();
    let (min_q, max_l) = sample_pairs(mesh, tag, trials, seed, |u| op.apply(u).expect("same mesh"));
    Ok(OperatorConstants {
        c: min_q.max(0.0),
        lipschitz: max_l.max(min_q.max(0.0)),
        gamma: (-min_q).max(0.0),
        lipschitz_nonlinear: 0.0,
        norm: tag,
        method: ConstantsMethod::Sampled,
    })
}

/// Sampled `(gamma, L_N)` of a pointwise nonlinearity on `mesh`.
pub fn sample_nonlinearity(
    nonlinearity: &Nonlinearity,
    mesh: &Mesh,
    tag: NormTag,
    trials: usize,
    seed: u64,
) -> (f64, f64) {
    let (min_q, max_l) = sample_pairs(*mesh, tag, trials, seed, |u| nonlinearity.apply(u));
    ((-min_q).max(0.0), max_l)
}

/// Minimum of `⟨Tu − Tv, u − v⟩/‖u − v‖²` and maximum of
/// `‖Tu − Tv‖_* / ‖u − v‖` over seeded random pairs in `[-1, 1]^dofs`.
fn sample_pairs(
    mesh: Mesh,
    tag: NormTag,
    trials: usize,
    seed: u64,
    apply: impl Fn(&GridFunction) -> GridFunction,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_q = f64::INFINITY;
    let mut max_l: f64 = 0.0;
    let draw = |rng: &mut ChaCha8Rng| {
        GridFunction::new(
            mesh,
            (0..mesh.dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .expect("finite samples")
    };
    for _ in 0..trials {
        let u = draw(&mut rng);
        let v = draw(&mut rng);
        let d = u.sub(&v).expect("same mesh");
        let dn = d.norm(tag.kind());
        if dn == 0.0 {
            continue;
        }
        let dt = apply(&u).sub(&apply(&v)).expect("same mesh");
        min_q = min_q.min(dt.dot(&d).expect("same mesh") / (dn * dn));
        max_l = max_l.max(dt.dual_norm(tag) / dn);
    }
    (min_q, max_l)
}

/// Extreme eigenvalues of `E v = λ G v`, where `E` is the energy matrix
/// `⟨A e_j, e_i⟩` (symmetric part) and `G` the Gram matrix of the norm.
fn rayleigh_extremes(op: &LinearEllipticOperator, tag: NormTag) -> Result<(f64, f64)> {
    let mesh = op.mesh();
    let m = mesh.dofs();
    let h = mesh.spacing();
    let band = |i: usize, j: usize| -> f64 {
        if i == j {
            op.diag()[i]
        } else if j + 1 == i {
            op.lower()[i]
        } else if i + 1 == j {
            op.upper()[i]
        } else {
            0.0
        }
    };
    let energy = DMatrix::from_fn(m, m, |i, j| {
        0.5 * (h * mesh.weight(i) * band(i, j) + h * mesh.weight(j) * band(j, i))
    });
    let gram = match tag {
        NormTag::L2 => DMatrix::from_fn(m, m, |i, j| if i == j { h * mesh.weight(i) } else { 0.0 }),
        NormTag::H1 => {
            let (lo, d, up) = mesh.h1_gram();
            DMatrix::from_fn(m, m, |i, j| {
                if i == j {
                    d[i]
                } else if j + 1 == i {
                    lo[i]
                } else if i + 1 == j {
                    up[i]
                } else {
                    0.0
                }
            })
        }
    };
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Solver("norm Gram matrix is not positive definite".into()))?;
    let l = chol.l();
    // C = L⁻¹ E L⁻ᵀ
    let y = l
        .solve_lower_triangular(&energy)
        .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
    let c = 0.5 * (&c + c.transpose());
    let eig = c.symmetric_eigenvalues();
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((min, max))
}
