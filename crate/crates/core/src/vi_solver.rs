//! Inner obstacle-problem solvers for `S(f, ψ)`: find `y ≤ ψ` with
//! `0 ≤ f − A(y) ⊥ ψ − y ≥ 0` componentwise.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, Mesh};
use crate::operators::{LinearEllipticOperator, Operator};

/// Initial step length of each projected Newton step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Damping {
    /// Start each step from the full Newton step, `τ = 1`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VIParams {
    /// Target KKT residual.
    pub tol: f64,
    pub max_iter: usize,
    /// PSOR over-relaxation, in (0, 2). Also used for the linearized
    /// problems of the nonlinear solver.
    pub omega: f64,
    pub tau: Damping,
}

impl Default for VIParams {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            omega: 1.0,
            tau: Damping::Auto,
        }
    }
}

impl VIParams {
    /// Optimal SOR relaxation for the 1-D Laplacian on `mesh`,
    /// `2 / (1 + sin(πh))`.
    pub fn optimal_omega(mesh: &Mesh) -> f64 {
        2.0 / (1.0 + (std::f64::consts::PI * mesh.spacing()).sin())
    }

    /// Defaults with `omega` set to [`VIParams::optimal_omega`].
    pub fn for_mesh(mesh: &Mesh) -> Self {
        Self {
            omega: Self::optimal_omega(mesh),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol must be > 0, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be > 0".into()));
        }
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "omega must lie in (0, 2), got {}",
                self.omega
            )));
        }
        if let Damping::Fixed(t) = self.tau {
            if !(t > 0.0 && t < 2.0) {
                return Err(Error::InvalidParameter(format!(
                    "tau must lie in (0, 2), got {t}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VISolveReport {
    pub solution: GridFunction,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
}

impl VISolveReport {
    pub const CSV_HEADER: &'static str = "iterations,kkt_residual,converged";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{}",
            self.iterations,
            crate::grid::format_real(self.kkt_residual),
            self.converged
        )
    }
}

fn check_meshes(mesh: &Mesh, f: &GridFunction, psi: &GridFunction) -> Result<()> {
    if f.mesh() != mesh || psi.mesh() != mesh {
        return Err(Error::IncompatibleGrid(
            "operator, force and obstacle meshes differ".into(),
        ));
    }
    Ok(())
}

/// `max_i |min(ψ_i − y_i, (f − A y)_i)|`.
pub fn kkt_residual(
    op: &Operator,
    f: &GridFunction,
    psi: &GridFunction,
    y: &GridFunction,
) -> Result<f64> {
    check_meshes(op.mesh(), f, psi)?;
    let ay = op.apply(y)?;
    Ok(residual_from(
        f.values(),
        psi.values(),
        y.values(),
        ay.values(),
    ))
}

fn residual_from(f: &[f64], psi: &[f64], y: &[f64], ay: &[f64]) -> f64 {
    (0..y.len()).fold(0.0, |m, i| {
        let r = (psi[i] - y[i]).min(f[i] - ay[i]);
        m.max(r.abs())
    })
}

fn linear_residual(op: &LinearEllipticOperator, f: &[f64], psi: &[f64], y: &[f64]) -> f64 {
    (0..y.len()).fold(0.0, |m, i| {
        let r = (psi[i] - y[i]).min(f[i] - op.row_dot(y, i));
        m.max(r.abs())
    })
}

/// Projected SOR from the feasible start `min(0, ψ)`.
pub fn solve_vi_psor(
    op: &LinearEllipticOperator,
    f: &GridFunction,
    psi: &GridFunction,
    params: &VIParams,
) -> Result<VISolveReport> {
    let start = GridFunction::zeros(*op.mesh()).lattice_min(psi)?;
    solve_vi_psor_from(op, f, psi, params, &start)
}

/// Projected SOR from `min(start, ψ)`. Sweeps run in ascending dof order.
pub fn solve_vi_psor_from(
    op: &LinearEllipticOperator,
    f: &GridFunction,
    psi: &GridFunction,
    params: &VIParams,
    start: &GridFunction,
) -> Result<VISolveReport> {
    params.validate()?;
    check_meshes(op.mesh(), f, psi)?;
    let mut y = start.lattice_min(psi)?.into_values();
    let (fv, pv) = (f.values(), psi.values());
    let diag = op.diag();
    let omega = params.omega;

    let mut residual = linear_residual(op, fv, pv, &y);
    let mut iterations = 0;
    while residual > params.tol && iterations < params.max_iter {
        for i in 0..y.len() {
            let r = fv[i] - op.row_dot(&y, i);
            y[i] = pv[i].min(y[i] + omega * r / diag[i]);
        }
        iterations += 1;
        residual = linear_residual(op, fv, pv, &y);
    }
    Ok(VISolveReport {
        solution: GridFunction::new(*op.mesh(), y)?,
        iterations,
        kkt_residual: residual,
        converged: residual <= params.tol,
    })
}

/// Damped projected Newton from the feasible start `min(0, ψ)`.
pub fn solve_vi_projected(
    op: &Operator,
    f: &GridFunction,
    psi: &GridFunction,
    params: &VIParams,
) -> Result<VISolveReport> {
    let start = GridFunction::zeros(*op.mesh()).lattice_min(psi)?;
    solve_vi_projected_from(op, f, psi, params, &start)
}

/// Damped projected Newton iteration from `min(start, ψ)`.
///
/// Each step linearizes `A` at the current iterate `y`, giving a tridiagonal
/// Jacobian `J`, and solves the linear obstacle problem
/// `S(f − A(y) + J y, ψ)` by PSOR warm-started at `y`. The new iterate is
/// `y + τ (ŷ − y)`, still below `ψ`. `τ` starts at the damping value and is
/// halved while the KKT residual would increase; the step fails with
/// [`Error::Stagnation`] once `τ` drops below `1e-12`.
pub fn solve_vi_projected_from(
    op: &Operator,
    f: &GridFunction,
    psi: &GridFunction,
    params: &VIParams,
    start: &GridFunction,
) -> Result<VISolveReport> {
    params.validate()?;
    check_meshes(op.mesh(), f, psi)?;
    let mesh = *op.mesh();
    let mut y = start.lattice_min(psi)?.into_values();
    let (fv, pv) = (f.values(), psi.values());
    let tau0 = match params.tau {
        Damping::Auto => 1.0,
        Damping::Fixed(t) => t,
    };
    let linear_params = VIParams {
        tol: 0.25 * params.tol,
        tau: Damping::Auto,
        ..*params
    };

    let mut ay = op.apply_slice(&y);
    let mut residual = residual_from(fv, pv, &y, &ay);
    let mut iterations = 0;
    while residual > params.tol && iterations < params.max_iter {
        let jac = linearization(op, &mesh, &y)?;
        let jy = jac.apply_slice(&y);
        let rhs: Vec<f64> = (0..y.len()).map(|i| fv[i] - ay[i] + jy[i]).collect();
        let newton = solve_vi_psor_from(
            &jac,
            &GridFunction::new(mesh, rhs)?,
            psi,
            &linear_params,
            &GridFunction::new(mesh, y.clone())?,
        )?
        .solution
        .into_values();

        let mut tau = tau0;
        loop {
            let trial: Vec<f64> = (0..y.len())
                .map(|i| pv[i].min(y[i] + tau * (newton[i] - y[i])))
                .collect();
            let a_trial = op.apply_slice(&trial);
            let next = residual_from(fv, pv, &trial, &a_trial);
            if next <= residual || next <= params.tol {
                y = trial;
                ay = a_trial;
                residual = next;
                break;
            }
            tau *= 0.5;
            if tau < 1e-12 {
                return Err(Error::Stagnation {
                    tau,
                    iterations: iterations + 1,
                });
            }
        }
        iterations += 1;
    }
    Ok(VISolveReport {
        solution: GridFunction::new(mesh, y)?,
        iterations,
        kkt_residual: residual,
        converged: residual <= params.tol,
    })
}

/// Jacobian of `op` at `y` as a band operator. Diagonal entries that vanish
/// (a degenerate p-Laplacian with flat neighbours) are lifted to a small
/// positive floor so that PSOR stays well defined.
fn linearization(op: &Operator, mesh: &Mesh, y: &[f64]) -> Result<LinearEllipticOperator> {
    let mut j = op.jacobian(y);
    let scale = j.diag.iter().fold(1.0_f64, |m, d| m.max(d.abs()));
    for d in j.diag.iter_mut() {
        *d = d.max(1e-12 * scale);
    }
    LinearEllipticOperator::from_bands(*mesh, j.lower, j.diag, j.upper)
}

/// Solves `S(f, ψ)` with PSOR when `op` is linear and with the projected
/// nonlinear iteration otherwise, starting from `min(start, ψ)`.
pub(crate) fn solve_vi_from(
    op: &Operator,
    linear: Option<&LinearEllipticOperator>,
    f: &GridFunction,
    psi: &GridFunction,
    params: &VIParams,
    start: &GridFunction,
) -> Result<VISolveReport> {
    match linear {
        Some(lin) => solve_vi_psor_from(lin, f, psi, params, start),
        None => solve_vi_projected_from(op, f, psi, params, start),
    }
}

/// Result of the exhaustive active-set search.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub solution: GridFunction,
    /// `true` where `y = ψ`.
    pub active: Vec<bool>,
    /// Number of active sets that passed the KKT test.
    pub accepted_sets: usize,
}

/// Brute-force solution of the obstacle problem by enumerating every active
/// set: fix `y = ψ` on the set, solve the remaining rows exactly, and keep
/// the first set whose point is feasible with nonnegative multipliers.
pub fn solve_vi_active_set_oracle(
    op: &LinearEllipticOperator,
    f: &GridFunction,
    psi: &GridFunction,
) -> Result<OracleSolution> {
    const FEAS_TOL: f64 = 1e-10;
    let mesh = *op.mesh();
    check_meshes(&mesh, f, psi)?;
    let m = mesh.dofs();
    if m > 20 {
        return Err(Error::OracleTooLarge(m));
    }
    let a = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            op.diag()[i]
        } else if j + 1 == i {
            op.lower()[i]
        } else if i + 1 == j {
            op.upper()[i]
        } else {
            0.0
        }
    });
    let (fv, pv) = (f.values(), psi.values());
    let mut first: Option<(Vec<f64>, Vec<bool>)> = None;
    let mut accepted = 0;
    for mask in 0u32..(1u32 << m) {
        let active: Vec<bool> = (0..m).map(|i| mask & (1 << i) != 0).collect();
        let free: Vec<usize> = (0..m).filter(|&i| !active[i]).collect();
        let mut y: Vec<f64> = (0..m)
            .map(|i| if active[i] { pv[i] } else { 0.0 })
            .collect();
        if !free.is_empty() {
            let k = free.len();
            let sub = DMatrix::from_fn(k, k, |r, c| a[(free[r], free[c])]);
            let rhs = DVector::from_fn(k, |r, _| {
                let i = free[r];
                fv[i]
                    - (0..m)
                        .filter(|&j| active[j])
                        .map(|j| a[(i, j)] * pv[j])
                        .sum::<f64>()
            });
            let Some(sol) = sub.lu().solve(&rhs) else {
                continue;
            };
            for (r, &i) in free.iter().enumerate() {
                y[i] = sol[r];
            }
        }
        let feasible = (0..m).all(|i| y[i] <= pv[i] + FEAS_TOL);
        let multipliers_ok = (0..m).filter(|&i| active[i]).all(|i| {
            let ay: f64 = (0..m).map(|j| a[(i, j)] * y[j]).sum();
            fv[i] - ay >= -FEAS_TOL
        });
        if feasible && multipliers_ok {
            accepted += 1;
            if first.is_none() {
                first = Some((y, active));
            }
        }
    }
    let (y, active) = first.ok_or(Error::Infeasible)?;
    Ok(OracleSolution {
        solution: GridFunction::new(mesh, y)?,
        active,
        accepted_sets: accepted,
    })
}
