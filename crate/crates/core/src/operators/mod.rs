//! Discrete elliptic operators on 1-D grids.
//!
//! Every operator returns nodal ("strong form") values; the duality pairing
//! with a test function is the trapezoid-weighted sum `h Σ w_i (Au)_i v_i`.
//! With that convention the Neumann flux rows carry a factor 2 at the end
//! nodes and the operators are symmetric in the weighted pairing.
//!
//! All operators are 3-point local, so their linearizations are tridiagonal
//! (see [`Operator::jacobian`]).

mod constants;

pub use constants::{estimate_constants, ConstantsMethod, OperatorConstants};

use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, GridFunction, Mesh};
use crate::tridiag;

/// Coefficient samples an assembled operator was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    /// Diffusion `a` at the `n` edge midpoints.
    pub diffusion: Vec<f64>,
    /// Reaction `a0` at the degrees of freedom.
    pub reaction: Vec<f64>,
}

/// Tridiagonal discretization of `-(a u')' + a0 u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEllipticOperator {
    mesh: Mesh,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    /// `diag + lower + upper`, kept separately so that rows are evaluated in
    /// flux-difference form and constants pass through Neumann rows exactly.
    zeroth: Vec<f64>,
    coefficients: Option<Coefficients>,
}

impl LinearEllipticOperator {
    /// Assembles the 3-point flux stencil with `a` sampled at edge midpoints
    /// and `a0` at the nodes.
    pub fn assemble(mesh: Mesh, a: impl Fn(f64) -> f64, a0: impl Fn(f64) -> f64) -> Result<Self> {
        let h = mesh.spacing();
        let diffusion: Vec<f64> = (0..mesh.cells()).map(|e| a((e as f64 + 0.5) * h)).collect();
        let reaction: Vec<f64> = mesh.coordinates().into_iter().map(a0).collect();
        Self::from_coefficients(
            mesh,
            Coefficients {
                diffusion,
                reaction,
            },
        )
    }

    pub fn from_coefficients(mesh: Mesh, coefficients: Coefficients) -> Result<Self> {
        let Coefficients {
            diffusion,
            reaction,
        } = &coefficients;
        if diffusion.len() != mesh.cells() || reaction.len() != mesh.dofs() {
            return Err(Error::IncompatibleGrid(
                "coefficient samples do not match the mesh".into(),
            ));
        }
        if let Some((e, a)) = diffusion
            .iter()
            .enumerate()
            .find(|(_, a)| !(**a > 0.0) || !a.is_finite())
        {
            return Err(Error::Ellipticity(format!(
                "diffusion coefficient {a} at edge {e} is not positive"
            )));
        }
        if let Some((i, a0)) = reaction
            .iter()
            .enumerate()
            .find(|(_, a0)| !(**a0 >= 0.0) || !a0.is_finite())
        {
            return Err(Error::Ellipticity(format!(
                "reaction coefficient {a0} at dof {i} is negative"
            )));
        }
        if mesh.boundary() == BoundaryCondition::Neumann && reaction.iter().all(|a0| *a0 == 0.0) {
            return Err(Error::Ellipticity(
                "pure Neumann operator without reaction term is singular".into(),
            ));
        }

        let m = mesh.dofs();
        let ih2 = 1.0 / (mesh.spacing() * mesh.spacing());
        let mut lower = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut upper = vec![0.0; m];
        let mut zeroth = reaction.clone();
        match mesh.boundary() {
            BoundaryCondition::Dirichlet => {
                // dof i sits on node i+1, between edges i and i+1
                for i in 0..m {
                    let (al, ar) = (diffusion[i], diffusion[i + 1]);
                    diag[i] = (al + ar) * ih2 + reaction[i];
                    if i > 0 {
                        lower[i] = -al * ih2;
                    } else {
                        zeroth[i] += al * ih2;
                    }
                    if i + 1 < m {
                        upper[i] = -ar * ih2;
                    } else {
                        zeroth[i] += ar * ih2;
                    }
                }
            }
            BoundaryCondition::Neumann => {
                let n = mesh.cells();
                diag[0] = 2.0 * diffusion[0] * ih2 + reaction[0];
                upper[0] = -2.0 * diffusion[0] * ih2;
                for k in 1..n {
                    let (al, ar) = (diffusion[k - 1], diffusion[k]);
                    lower[k] = -al * ih2;
                    diag[k] = (al + ar) * ih2 + reaction[k];
                    upper[k] = -ar * ih2;
                }
                lower[n] = -2.0 * diffusion[n - 1] * ih2;
                diag[n] = 2.0 * diffusion[n - 1] * ih2 + reaction[n];
            }
        }
        Ok(Self {
            mesh,
            lower,
            diag,
            upper,
            zeroth,
            coefficients: Some(coefficients),
        })
    }

    /// Operator given directly by its bands (`lower[0]`, `upper[m-1]` unused).
    pub fn from_bands(
        mesh: Mesh,
        lower: Vec<f64>,
        diag: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let m = mesh.dofs();
        if lower.len() != m || diag.len() != m || upper.len() != m {
            return Err(Error::IncompatibleGrid(format!(
                "bands must have length {m}"
            )));
        }
        if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::Ellipticity("diagonal must be positive".into()));
        }
        let (mut lower, mut upper) = (lower, upper);
        lower[0] = 0.0;
        upper[m - 1] = 0.0;
        let zeroth = (0..m).map(|i| diag[i] + lower[i] + upper[i]).collect();
        Ok(Self {
            mesh,
            lower,
            diag,
            upper,
            zeroth,
            coefficients: None,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn coefficients(&self) -> Option<&Coefficients> {
        self.coefficients.as_ref()
    }

    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        self.check_mesh(u)?;
        GridFunction::new(self.mesh, self.apply_slice(u.values()))
    }

    pub(crate) fn apply_slice(&self, u: &[f64]) -> Vec<f64> {
        (0..u.len()).map(|i| self.row_dot(u, i)).collect()
    }

    /// `(A u)_i` in flux-difference form.
    #[inline]
    pub(crate) fn row_dot(&self, u: &[f64], i: usize) -> f64 {
        let mut s = self.zeroth[i] * u[i];
        if i > 0 {
            s -= self.lower[i] * (u[i] - u[i - 1]);
        }
        if i + 1 < u.len() {
            s -= self.upper[i] * (u[i] - u[i + 1]);
        }
        s
    }

    /// Direct tridiagonal solve of `A u = f`.
    pub fn solve_unconstrained(&self, f: &GridFunction) -> Result<GridFunction> {
        self.check_mesh(f)?;
        let u = tridiag::solve(&self.lower, &self.diag, &self.upper, f.values())?;
        GridFunction::new(self.mesh, u)
    }

    /// Same stencil with `a0` replaced by `a0 + shift`. Needs coefficient
    /// samples, so only for assembled operators.
    pub fn with_reaction_shift(&self, shift: f64) -> Result<Self> {
        let coeffs = self.coefficients.as_ref().ok_or_else(|| {
            Error::InvalidParameter("operator was not assembled from coefficients".into())
        })?;
        let reaction = coeffs.reaction.iter().map(|a0| a0 + shift).collect();
        Self::from_coefficients(
            self.mesh,
            Coefficients {
                diffusion: coeffs.diffusion.clone(),
                reaction,
            },
        )
    }

    /// `A + eps·I + delta·R` as a new band operator.
    pub(crate) fn shifted(&self, eps: f64, delta: f64, r: Option<&Self>) -> Self {
        let mut out = self.clone();
        out.coefficients = None;
        for (d, z) in out.diag.iter_mut().zip(out.zeroth.iter_mut()) {
            *d += eps;
            *z += eps;
        }
        if let Some(r) = r {
            for i in 0..out.diag.len() {
                out.lower[i] += delta * r.lower[i];
                out.diag[i] += delta * r.diag[i];
                out.upper[i] += delta * r.upper[i];
                out.zeroth[i] += delta * r.zeroth[i];
            }
        }
        out
    }

    fn check_mesh(&self, u: &GridFunction) -> Result<()> {
        if u.mesh() != &self.mesh {
            return Err(Error::IncompatibleGrid(
                "operator and grid function meshes differ".into(),
            ));
        }
        Ok(())
    }
}

/// `-(φ_ε(u') u')'` with `φ_ε(g) = (g² + ε)^{(p-2)/2}`, homogeneous
/// Dirichlet conditions, fluxes on edge midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PLaplacianOperator {
    mesh: Mesh,
    p: f64,
    eps: f64,
}

impl PLaplacianOperator {
    pub fn new(mesh: Mesh, p: f64, eps: f64) -> Result<Self> {
        if mesh.boundary() != BoundaryCondition::Dirichlet {
            return Err(Error::InvalidParameter(
                "p-Laplacian is only defined on Dirichlet meshes".into(),
            ));
        }
        if !(p >= 2.0) || !p.is_finite() {
            return Err(Error::InvalidParameter(format!("p must be >= 2, got {p}")));
        }
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "eps must be >= 0, got {eps}"
            )));
        }
        Ok(Self { mesh, p, eps })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn exponent(&self) -> f64 {
        self.p
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    #[inline]
    fn flux(&self, g: f64) -> f64 {
        if self.p == 2.0 {
            return g;
        }
        (g * g + self.eps).powf(0.5 * (self.p - 2.0)) * g
    }

    #[inline]
    fn flux_derivative(&self, g: f64) -> f64 {
        if self.p == 2.0 {
            return 1.0;
        }
        let s = g * g + self.eps;
        if s == 0.0 {
            return 0.0;
        }
        s.powf(0.5 * (self.p - 4.0)) * ((self.p - 1.0) * g * g + self.eps)
    }

    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        if u.mesh() != &self.mesh {
            return Err(Error::IncompatibleGrid(
                "operator and grid function meshes differ".into(),
            ));
        }
        GridFunction::new(self.mesh, self.apply_slice(u.values()))
    }

    fn laplacian(&self) -> LinearEllipticOperator {
        LinearEllipticOperator::assemble(self.mesh, |_| 1.0, |_| 0.0)
            .expect("unit diffusion is elliptic")
    }

    fn apply_slice(&self, u: &[f64]) -> Vec<f64> {
        if self.p == 2.0 {
            return self.laplacian().apply_slice(u);
        }
        let h = self.mesh.spacing();
        let m = u.len();
        let node = |k: usize| if k == 0 || k == m + 1 { 0.0 } else { u[k - 1] };
        let fluxes: Vec<f64> = (0..=m)
            .map(|e| self.flux((node(e + 1) - node(e)) / h))
            .collect();
        (0..m).map(|i| (fluxes[i] - fluxes[i + 1]) / h).collect()
    }

    fn jacobian(&self, u: &[f64]) -> Bands {
        let h = self.mesh.spacing();
        let m = u.len();
        let node = |k: usize| if k == 0 || k == m + 1 { 0.0 } else { u[k - 1] };
        let edge: Vec<f64> = (0..=m)
            .map(|e| self.flux_derivative((node(e + 1) - node(e)) / h) / (h * h))
            .collect();
        Bands {
            lower: (0..m).map(|i| -edge[i]).collect(),
            diag: (0..m).map(|i| edge[i] + edge[i + 1]).collect(),
            upper: (0..m).map(|i| -edge[i + 1]).collect(),
        }
    }
}

/// Pointwise nonlinearity added to a linear operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nonlinearity {
    /// `λ·sin(y_i)`.
    Sine { amplitude: f64 },
}

impl Nonlinearity {
    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            Self::Sine { amplitude } => amplitude * y.sin(),
        }
    }

    #[inline]
    pub fn derivative(&self, y: f64) -> f64 {
        match *self {
            Self::Sine { amplitude } => amplitude * y.cos(),
        }
    }

    /// Pointwise bound on `|N(y)|` and on `|N'(y)|`.
    pub fn amplitude(&self) -> f64 {
        match *self {
            Self::Sine { amplitude } => amplitude.abs(),
        }
    }

    pub fn apply(&self, u: &GridFunction) -> GridFunction {
        u.map(|v| self.eval(v))
    }
}

/// `A + N` with `A` linear elliptic and `N` pointwise, possibly non-monotone.
#[derive(Debug, Clone, PartialEq)]
pub struct NonMonotoneOperator {
    base: LinearEllipticOperator,
    nonlinearity: Nonlinearity,
}

impl NonMonotoneOperator {
    pub fn new(base: LinearEllipticOperator, nonlinearity: Nonlinearity) -> Result<Self> {
        if !nonlinearity.amplitude().is_finite() {
            return Err(Error::InvalidParameter(
                "nonlinearity amplitude must be finite".into(),
            ));
        }
        Ok(Self { base, nonlinearity })
    }

    pub fn base(&self) -> &LinearEllipticOperator {
        &self.base
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }
}

/// Bands of a tridiagonal matrix, laid out as in
/// [`LinearEllipticOperator::from_bands`].
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Bands {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bands {
    fn of(op: &LinearEllipticOperator) -> Self {
        Self {
            lower: op.lower.clone(),
            diag: op.diag.clone(),
            upper: op.upper.clone(),
        }
    }
}

/// `op + eps·I + delta·R`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedOperator {
    inner: Operator,
    eps: f64,
    delta: f64,
    regularizer: Option<LinearEllipticOperator>,
}

impl RegularizedOperator {
    pub fn inner(&self) -> &Operator {
        &self.inner
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Any of the discrete operators the solvers accept.
#[derive(Debug, Clone, PartialEq)]
pub enum Operator {
    Linear(LinearEllipticOperator),
    PLaplacian(PLaplacianOperator),
    NonMonotone(NonMonotoneOperator),
    Regularized(Box<RegularizedOperator>),
}

impl From<LinearEllipticOperator> for Operator {
    fn from(op: LinearEllipticOperator) -> Self {
        Self::Linear(op)
    }
}

impl From<PLaplacianOperator> for Operator {
    fn from(op: PLaplacianOperator) -> Self {
        Self::PLaplacian(op)
    }
}

impl From<NonMonotoneOperator> for Operator {
    fn from(op: NonMonotoneOperator) -> Self {
        Self::NonMonotone(op)
    }
}

impl Operator {
    pub fn mesh(&self) -> &Mesh {
        match self {
            Self::Linear(op) => op.mesh(),
            Self::PLaplacian(op) => op.mesh(),
            Self::NonMonotone(op) => op.base.mesh(),
            Self::Regularized(r) => r.inner.mesh(),
        }
    }

    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        if u.mesh() != self.mesh() {
            return Err(Error::IncompatibleGrid(
                "operator and grid function meshes differ".into(),
            ));
        }
        GridFunction::new(*self.mesh(), self.apply_slice(u.values()))
    }

    pub(crate) fn apply_slice(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Self::Linear(op) => op.apply_slice(u),
            Self::PLaplacian(op) => op.apply_slice(u),
            Self::NonMonotone(op) => {
                let mut out = op.base.apply_slice(u);
                for (o, v) in out.iter_mut().zip(u) {
                    *o += op.nonlinearity.eval(*v);
                }
                out
            }
            Self::Regularized(r) => {
                let mut out = r.inner.apply_slice(u);
                for (o, v) in out.iter_mut().zip(u) {
                    *o += r.eps * v;
                }
                if let Some(reg) = &r.regularizer {
                    for (o, rv) in out.iter_mut().zip(reg.apply_slice(u)) {
                        *o += r.delta * rv;
                    }
                }
                out
            }
        }
    }

    /// Tridiagonal Jacobian of the operator at `y`.
    pub(crate) fn jacobian(&self, y: &[f64]) -> Bands {
        match self {
            Self::Linear(op) => Bands::of(op),
            Self::PLaplacian(op) => op.jacobian(y),
            Self::NonMonotone(op) => {
                let mut j = Bands::of(&op.base);
                for (d, v) in j.diag.iter_mut().zip(y) {
                    *d += op.nonlinearity.derivative(*v);
                }
                j
            }
            Self::Regularized(r) => {
                let mut j = r.inner.jacobian(y);
                for d in j.diag.iter_mut() {
                    *d += r.eps;
                }
                if let Some(reg) = &r.regularizer {
                    for i in 0..j.diag.len() {
                        j.lower[i] += r.delta * reg.lower[i];
                        j.diag[i] += r.delta * reg.diag[i];
                        j.upper[i] += r.delta * reg.upper[i];
                    }
                }
                j
            }
        }
    }

    /// The operator as a band matrix, when it is linear.
    pub fn linear_form(&self) -> Option<LinearEllipticOperator> {
        match self {
            Self::Linear(op) => Some(op.clone()),
            Self::PLaplacian(op) if op.p == 2.0 => Some(op.laplacian()),
            Self::PLaplacian(_) | Self::NonMonotone(_) => None,
            Self::Regularized(r) => r
                .inner
                .linear_form()
                .map(|l| l.shifted(r.eps, r.delta, r.regularizer.as_ref())),
        }
    }

    /// Linear part of the operator, used for supersolutions `A⁻¹F`. For the
    /// composite `A + N` this is `A` (with any regularization applied).
    pub fn linear_part(&self) -> Option<LinearEllipticOperator> {
        match self {
            Self::NonMonotone(op) => Some(op.base.clone()),
            Self::Regularized(r) => r
                .inner
                .linear_part()
                .map(|l| l.shifted(r.eps, r.delta, r.regularizer.as_ref())),
            other => other.linear_form(),
        }
    }

    /// Splits `A + N` into its linear part and nonlinearity.
    pub(crate) fn composite_parts(&self) -> Option<(LinearEllipticOperator, Nonlinearity)> {
        match self {
            Self::NonMonotone(op) => Some((op.base.clone(), op.nonlinearity)),
            Self::Regularized(r) => r
                .inner
                .composite_parts()
                .map(|(l, n)| (l.shifted(r.eps, r.delta, r.regularizer.as_ref()), n)),
            _ => None,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.linear_form().is_some()
    }
}

/// Wraps `op` as `u ↦ op(u) + eps·u + delta·R u`. The `eps` term is the
/// identity in the mass-weighted pairing.
pub fn add_regularization(
    op: &Operator,
    eps: f64,
    delta: f64,
    regularizer: Option<&LinearEllipticOperator>,
) -> Result<Operator> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "eps must be >= 0, got {eps}"
        )));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "delta must be >= 0, got {delta}"
        )));
    }
    if delta > 0.0 && regularizer.is_none() {
        return Err(Error::MissingRegularizer);
    }
    if let Some(r) = regularizer {
        if r.mesh() != op.mesh() {
            return Err(Error::IncompatibleGrid("regularizer mesh differs".into()));
        }
    }
    if eps == 0.0 && delta == 0.0 {
        return Ok(op.clone());
    }
    Ok(Operator::Regularized(Box::new(RegularizedOperator {
        inner: op.clone(),
        eps,
        delta,
        regularizer: if delta > 0.0 {
            regularizer.cloned()
        } else {
            None
        },
    })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::NormKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dirichlet(n: usize) -> Mesh {
        Mesh::new(n, BoundaryCondition::Dirichlet).unwrap()
    }

    fn neumann(n: usize) -> Mesh {
        Mesh::new(n, BoundaryCondition::Neumann).unwrap()
    }

    fn random(mesh: Mesh, rng: &mut ChaCha8Rng) -> GridFunction {
        GridFunction::new(
            mesh,
            (0..mesh.dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn neumann_stencil_annihilates_constants() {
        for n in [2, 5, 64] {
            let op = LinearEllipticOperator::assemble(neumann(n), |x| 1.0 + x, |_| 0.7).unwrap();
            let au = op.apply(&GridFunction::constant(neumann(n), 1.0)).unwrap();
            for v in au.values() {
                assert!((v - 0.7).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn dirichlet_hat_stencil() {
        let op = LinearEllipticOperator::assemble(dirichlet(4), |_| 1.0, |_| 0.0).unwrap();
        let hat = GridFunction::new(dirichlet(4), vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(op.apply(&hat).unwrap().values(), &[-16.0, 32.0, -16.0]);
    }

    #[test]
    fn coefficient_perturbation_scales_like_inverse_m() {
        let mesh = dirichlet(16);
        let base = LinearEllipticOperator::assemble(mesh, |_| 1.0, |_| 1.0).unwrap();
        let mut scaled = Vec::new();
        for m in [1.0, 2.0, 4.0, 8.0, 16.0] {
            let pert = LinearEllipticOperator::assemble(mesh, |_| 1.0 + 1.0 / m, |_| 1.0).unwrap();
            // max-row-sum norm of the band difference
            let norm = (0..mesh.dofs())
                .map(|i| {
                    (pert.lower()[i] - base.lower()[i]).abs()
                        + (pert.diag()[i] - base.diag()[i]).abs()
                        + (pert.upper()[i] - base.upper()[i]).abs()
                })
                .fold(0.0, f64::max);
            scaled.push(norm * m);
        }
        for s in &scaled {
            assert!((s - scaled[0]).abs() <= 1e-9 * scaled[0]);
        }
    }

    #[test]
    fn ellipticity_errors() {
        assert!(matches!(
            LinearEllipticOperator::assemble(dirichlet(8), |x| x - 0.5, |_| 0.0),
            Err(Error::Ellipticity(_))
        ));
        assert!(matches!(
            LinearEllipticOperator::assemble(dirichlet(8), |_| 1.0, |_| -1.0),
            Err(Error::Ellipticity(_))
        ));
        assert!(matches!(
            LinearEllipticOperator::assemble(neumann(8), |_| 1.0, |_| 0.0),
            Err(Error::Ellipticity(_))
        ));
    }

    #[test]
    fn linear_symmetry_and_t_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mesh in [dirichlet(17), neumann(17)] {
            let op = LinearEllipticOperator::assemble(mesh, |x| 1.0 + x * x, |x| 0.5 + x).unwrap();
            for _ in 0..100 {
                let u = random(mesh, &mut rng);
                let v = random(mesh, &mut rng);
                let au = op.apply(&u).unwrap();
                let av = op.apply(&v).unwrap();
                let lhs = au.dot(&v).unwrap();
                let rhs = u.dot(&av).unwrap();
                let scale = u.norm(NormKind::L2) * v.norm(NormKind::L2);
                assert!((lhs - rhs).abs() <= 1e-12 * scale);
                let d = u.sub(&v).unwrap();
                let t = au.sub(&av).unwrap().dot(&d.pos_part()).unwrap();
                assert!(t >= -1e-10);
                assert!(au.dot(&u).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn linear_homogeneity_is_exact() {
        let mesh = dirichlet(9);
        let op = LinearEllipticOperator::assemble(mesh, |_| 1.0, |_| 1.0).unwrap();
        let u = GridFunction::from_fn(mesh, |x| (3.0 * x).sin()).unwrap();
        let lhs = op.apply(&u.scale(2.0)).unwrap();
        let rhs = op.apply(&u).unwrap().scale(2.0);
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn unconstrained_solves() {
        let m = neumann(32);
        let op = LinearEllipticOperator::assemble(m, |_| 1.0, |_| 1.0).unwrap();
        let u = op
            .solve_unconstrained(&GridFunction::constant(m, 1.0))
            .unwrap();
        assert!(u.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let eps = 0.3;
        let op = LinearEllipticOperator::assemble(m, |_| 1.0, |_| 1.0 + eps).unwrap();
        let u = op
            .solve_unconstrained(&GridFunction::constant(m, 1.0))
            .unwrap();
        assert!(u
            .values()
            .iter()
            .all(|v| (v - 1.0 / (1.0 + eps)).abs() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mesh = dirichlet(rng.gen_range(3..40));
            let k = mesh.dofs();
            let off: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lower: Vec<f64> = (0..k)
                .map(|i| if i > 0 { off[i - 1] } else { 0.0 })
                .collect();
            let diag: Vec<f64> = (0..k)
                .map(|i| lower[i].abs() + off[i].abs() + rng.gen_range(0.1..1.0))
                .collect();
            let op = LinearEllipticOperator::from_bands(mesh, lower, diag, off).unwrap();
            let f = random(mesh, &mut rng);
            let u = op.solve_unconstrained(&f).unwrap();
            let res = op.apply(&u).unwrap().sub(&f).unwrap().norm(NormKind::Sup);
            assert!(res <= 1e-10 * f.norm(NormKind::Sup));
        }
    }

    #[test]
    fn plaplacian_examples() {
        let mesh = dirichlet(4);
        let hat = GridFunction::new(mesh, vec![0.0, 1.0, 0.0]).unwrap();
        let p4 = PLaplacianOperator::new(mesh, 4.0, 0.0).unwrap();
        let out = p4.apply(&hat).unwrap();
        for (a, b) in out.values().iter().zip([-256.0, 512.0, -256.0]) {
            assert!((a - b).abs() < 1e-9);
        }

        let mesh = dirichlet(12);
        let u = GridFunction::from_fn(mesh, |x| (5.0 * x).sin() + x).unwrap();
        let lap = LinearEllipticOperator::assemble(mesh, |_| 1.0, |_| 0.0).unwrap();
        let p2 = PLaplacianOperator::new(mesh, 2.0, 0.7).unwrap();
        assert_eq!(p2.apply(&u).unwrap(), lap.apply(&u).unwrap());

        assert!(PLaplacianOperator::new(neumann(4), 3.0, 0.0).is_err());
        assert!(PLaplacianOperator::new(mesh, 1.5, 0.0).is_err());
    }

    #[test]
    fn plaplacian_homogeneity_degree_p_minus_one() {
        let mesh = dirichlet(16);
        let u = GridFunction::from_fn(mesh, |x| x * (1.0 - x) + 0.1 * (9.0 * x).sin()).unwrap();
        for p in [2.0, 3.0, 4.5] {
            let op = PLaplacianOperator::new(mesh, p, 0.0).unwrap();
            let au = op.apply(&u).unwrap();
            for t in [0.5, 2.0, 3.0] {
                let lhs = op.apply(&u.scale(t)).unwrap();
                let rhs = au.scale(t.powf(p - 1.0));
                let err = lhs.sub(&rhs).unwrap().norm(NormKind::Sup);
                assert!(
                    err <= 1e-10 * rhs.norm(NormKind::Sup).max(1.0),
                    "p={p} t={t} err={err}"
                );
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = dirichlet(10);
        let lin = LinearEllipticOperator::assemble(d, |_| 1.0, |_| 1.0).unwrap();
        let ops: Vec<Operator> = vec![
            lin.clone().into(),
            PLaplacianOperator::new(d, 3.0, 1e-3).unwrap().into(),
            NonMonotoneOperator::new(lin.clone(), Nonlinearity::Sine { amplitude: 0.4 })
                .unwrap()
                .into(),
            add_regularization(
                &PLaplacianOperator::new(d, 3.0, 0.0).unwrap().into(),
                0.2,
                0.1,
                Some(&lin),
            )
            .unwrap(),
        ];
        for op in &ops {
            let y = random(d, &mut rng);
            let j = op.jacobian(y.values());
            let m = d.dofs();
            let s = 1e-6;
            for k in 0..m {
                let mut up = y.values().to_vec();
                let mut dn = up.clone();
                up[k] += s;
                dn[k] -= s;
                let (ap, am) = (op.apply_slice(&up), op.apply_slice(&dn));
                for i in 0..m {
                    let fd = (ap[i] - am[i]) / (2.0 * s);
                    let exact = match i as isize - k as isize {
                        0 => j.diag[i],
                        1 => j.lower[i],
                        -1 => j.upper[i],
                        _ => 0.0,
                    };
                    assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1.0), "{i} {k}");
                }
            }
        }
    }

    #[test]
    fn nonmonotone_reduces_to_base_when_amplitude_vanishes() {
        let m = neumann(8);
        let base = LinearEllipticOperator::assemble(m, |_| 1.0, |_| 1.0).unwrap();
        let op: Operator =
            NonMonotoneOperator::new(base.clone(), Nonlinearity::Sine { amplitude: 0.0 })
                .unwrap()
                .into();
        let u = GridFunction::from_fn(m, |x| 3.0 * x - 1.0).unwrap();
        assert_eq!(op.apply(&u).unwrap(), base.apply(&u).unwrap());
        let n = Nonlinearity::Sine { amplitude: -0.3 };
        assert!(n.apply(&u.scale(10.0)).norm(NormKind::Sup) <= 0.3);
    }

    #[test]
    fn regularization_wrapper() {
        let m = neumann(8);
        let op: Operator = LinearEllipticOperator::assemble(m, |_| 1.0, |_| 1.0)
            .unwrap()
            .into();
        assert_eq!(add_regularization(&op, 0.0, 0.0, None).unwrap(), op);
        let reg = add_regularization(&op, 0.25, 0.0, None).unwrap();
        let out = reg.apply(&GridFunction::constant(m, 1.0)).unwrap();
        assert!(out.values().iter().all(|v| (v - 1.25).abs() < 1e-13));
        assert!(matches!(
            add_regularization(&op, 0.1, 0.1, None),
            Err(Error::MissingRegularizer)
        ));
        assert!(add_regularization(&op, -0.1, 0.0, None).is_err());
        // linear form collapses to a band operator with the same action
        let lf = reg.linear_form().unwrap();
        let u = GridFunction::from_fn(m, |x| x * x).unwrap();
        assert!(
            lf.apply(&u)
                .unwrap()
                .distance(&reg.apply(&u).unwrap(), NormKind::Sup)
                .unwrap()
                < 1e-12
        );
    }
}
