//! Outer solvers for quasi-variational inequalities `y = S(f, Φ(y))`.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{format_real, GridFunction};
use crate::obstacle::ObstacleMap;
use crate::operators::{add_regularization, LinearEllipticOperator, Operator, OperatorConstants};
use crate::vi_solver::{solve_vi_from, VIParams};

/// Slack allowed when checking that monotone iterates keep their order.
const ORDER_TOL: f64 = 1e-9;

/// Operator, force and obstacle map of a QVI, plus an optional upper force
/// `F ≥ f` whose unconstrained solution starts the decreasing iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct QVIProblem {
    pub operator: Operator,
    pub f: GridFunction,
    pub obstacle: ObstacleMap,
    pub upper_force: Option<GridFunction>,
}

impl QVIProblem {
    pub fn new(
        operator: Operator,
        f: GridFunction,
        obstacle: ObstacleMap,
        upper_force: Option<GridFunction>,
    ) -> Result<Self> {
        let mesh = operator.mesh();
        if f.mesh() != mesh || obstacle.mesh() != mesh {
            return Err(Error::IncompatibleGrid(
                "operator, force and obstacle map must share a mesh".into(),
            ));
        }
        if let Some(upper) = &upper_force {
            if upper.mesh() != mesh {
                return Err(Error::IncompatibleGrid(
                    "upper force lives on another mesh".into(),
                ));
            }
            if !f.leq(upper, 0.0)? {
                return Err(Error::InvalidParameter(
                    "upper force F must satisfy f ≤ F".into(),
                ));
            }
        }
        Ok(Self {
            operator,
            f,
            obstacle,
            upper_force,
        })
    }

    /// Same problem with a different operator.
    pub fn with_operator(&self, operator: Operator) -> Result<Self> {
        Self::new(
            operator,
            self.f.clone(),
            self.obstacle.clone(),
            self.upper_force.clone(),
        )
    }

    /// Same problem with a different force. The upper force is dropped if it
    /// no longer dominates.
    pub fn with_force(&self, f: GridFunction) -> Result<Self> {
        let upper = match &self.upper_force {
            Some(u) if f.leq(u, 0.0)? => Some(u.clone()),
            _ => None,
        };
        Self::new(self.operator.clone(), f, self.obstacle.clone(), upper)
    }

    pub fn with_obstacle(&self, obstacle: ObstacleMap) -> Result<Self> {
        Self::new(
            self.operator.clone(),
            self.f.clone(),
            obstacle,
            self.upper_force.clone(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterParams {
    /// Sup-norm step size at which the outer loop stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OuterParams {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// Direction of the outer iterates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonotoneTrace {
    Increasing,
    Decreasing,
    None,
}

impl fmt::Display for MonotoneTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Increasing => "increasing",
            Self::Decreasing => "decreasing",
            Self::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QVIReport {
    pub solution: GridFunction,
    pub outer_iterations: usize,
    /// `‖y^{k+1} − y^k‖_sup` for every outer step.
    pub step_norms: Vec<f64>,
    /// Consecutive step ratios; `ratios[k] = step_norms[k+1] / step_norms[k]`.
    pub ratios: Vec<f64>,
    /// Largest ratio once the first two are discarded (all ratios if fewer
    /// than three are available).
    pub rho_observed: f64,
    pub converged: bool,
    pub monotone_trace: MonotoneTrace,
}

impl QVIReport {
    pub const CSV_HEADER: &'static str = "outer_iter,step_norm,ratio";

    /// Per-step rows plus a trailing `# summary` comment line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (k, step) in self.step_norms.iter().enumerate() {
            let ratio = if k == 0 {
                String::new()
            } else {
                format_real(self.ratios[k - 1])
            };
            out.push_str(&format!("{},{},{}\n", k + 1, format_real(*step), ratio));
        }
        out.push_str(&format!(
            "# summary outer_iterations={} converged={} rho_observed={} monotone_trace={}\n",
            self.outer_iterations,
            self.converged,
            format_real(self.rho_observed),
            self.monotone_trace
        ));
        out
    }
}

/// Inputs and verdict of the contraction (smallness) condition
/// `ρ = (L_A + L_N)·L_Φ / (c − γ) < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionCertificate {
    pub c: f64,
    pub lipschitz_a: f64,
    pub lipschitz_n: f64,
    pub gamma: f64,
    pub lipschitz_phi: f64,
    /// Infinite when `γ ≥ c`.
    pub rho: f64,
    pub smallness_ok: bool,
}

impl ContractionCertificate {
    pub const CSV_HEADER: &'static str = "c,L_A,L_N,gamma,L_phi,rho,smallness_ok";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            format_real(self.c),
            format_real(self.lipschitz_a),
            format_real(self.lipschitz_n),
            format_real(self.gamma),
            format_real(self.lipschitz_phi),
            format_real(self.rho),
            self.smallness_ok
        )
    }

    /// Constant of the global stability estimate
    /// `‖y₁ − y₂‖ ≤ K‖f₁ − f₂‖_*` with `K = 1/(c − γ − (L_A + L_N)L_Φ)`.
    pub fn stability_constant(&self) -> Result<f64> {
        if !self.smallness_ok {
            return Err(Error::Precondition(format!(
                "smallness condition fails (rho = {})",
                self.rho
            )));
        }
        let margin =
            self.c - self.gamma - (self.lipschitz_a + self.lipschitz_n) * self.lipschitz_phi;
        Ok(1.0 / margin)
    }
}

pub fn contraction_certificate(
    constants: &OperatorConstants,
    lipschitz_phi: f64,
) -> ContractionCertificate {
    let lipschitz_a = constants.lipschitz_linear();
    let lipschitz_n = constants.lipschitz_nonlinear;
    let gap = constants.c - constants.gamma;
    let rho = if gap > 0.0 {
        (lipschitz_a + lipschitz_n) * lipschitz_phi / gap
    } else {
        f64::INFINITY
    };
    ContractionCertificate {
        c: constants.c,
        lipschitz_a,
        lipschitz_n,
        gamma: constants.gamma,
        lipschitz_phi,
        rho,
        smallness_ok: gap > 0.0 && rho < 1.0,
    }
}

#[derive(Clone, Copy)]
enum Ordering {
    Free,
    NonDecreasing,
    NonIncreasing,
}

/// Iterates `y^{k+1} = S(f, Φ(y^k))` from `y0` until the sup-norm step drops
/// to `outer.tol`. Each inner solve is warm-started at `min(y^k, Φ(y^k))`.
pub fn solve_qvi_fixed_point(
    problem: &QVIProblem,
    y0: &GridFunction,
    outer: &OuterParams,
    inner: &VIParams,
) -> Result<QVIReport> {
    iterate(problem, y0, outer, inner, Ordering::Free)
}

/// Increasing iteration from `y0 = 0`; its limit approximates the minimal
/// solution. Fails with [`Error::OrderingViolation`] if an iterate drops.
pub fn solve_qvi_minimal(
    problem: &QVIProblem,
    outer: &OuterParams,
    inner: &VIParams,
) -> Result<QVIReport> {
    let y0 = GridFunction::zeros(*problem.operator.mesh());
    iterate(problem, &y0, outer, inner, Ordering::NonDecreasing)
}

/// Decreasing iteration from the supersolution `ȳ = A⁻¹F`; its limit
/// approximates the maximal solution.
pub fn solve_qvi_maximal(
    problem: &QVIProblem,
    outer: &OuterParams,
    inner: &VIParams,
) -> Result<QVIReport> {
    let y0 = supersolution(problem, inner)?;
    iterate(problem, &y0, outer, inner, Ordering::NonIncreasing)
}

/// Unconstrained solution of `A(ȳ) = F`.
pub fn supersolution(problem: &QVIProblem, inner: &VIParams) -> Result<GridFunction> {
    let upper = problem
        .upper_force
        .as_ref()
        .ok_or_else(|| Error::Precondition("maximal solve needs an upper force F".into()))?;
    if let Some(linear) = problem.operator.linear_form() {
        return linear.solve_unconstrained(upper);
    }
    let mesh = *problem.operator.mesh();
    let no_obstacle = GridFunction::constant(mesh, 1e30);
    let report = solve_vi_from(
        &problem.operator,
        None,
        upper,
        &no_obstacle,
        inner,
        &GridFunction::zeros(mesh),
    )?;
    if !report.converged {
        return Err(Error::InnerNotConverged {
            outer_iteration: 0,
            residual: report.kkt_residual,
        });
    }
    Ok(report.solution)
}

/// Fixed-point iteration for the problem with operator
/// `A + eps·I + delta·R`, started from zero.
pub fn solve_qvi_regularized(
    problem: &QVIProblem,
    eps: f64,
    delta: f64,
    regularizer: Option<&LinearEllipticOperator>,
    outer: &OuterParams,
    inner: &VIParams,
) -> Result<QVIReport> {
    let op = add_regularization(&problem.operator, eps, delta, regularizer)?;
    let regularized = problem.with_operator(op)?;
    let y0 = GridFunction::zeros(*problem.operator.mesh());
    solve_qvi_fixed_point(&regularized, &y0, outer, inner)
}

fn iterate(
    problem: &QVIProblem,
    y0: &GridFunction,
    outer: &OuterParams,
    inner: &VIParams,
    ordering: Ordering,
) -> Result<QVIReport> {
    if !(outer.tol > 0.0) || outer.max_iter == 0 {
        return Err(Error::InvalidParameter(
            "outer tolerance must be > 0 and max_iter ≥ 1".into(),
        ));
    }
    if y0.mesh() != problem.operator.mesh() {
        return Err(Error::IncompatibleGrid(
            "start iterate lives on another mesh".into(),
        ));
    }
    let linear = problem.operator.linear_form();
    let mut y = y0.clone();
    let mut steps = Vec::new();
    let (mut rises, mut drops) = (false, false);
    let mut converged = false;

    for k in 1..=outer.max_iter {
        let psi = problem.obstacle.eval(&y)?;
        let start = y.lattice_min(&psi)?;
        let report = solve_vi_from(
            &problem.operator,
            linear.as_ref(),
            &problem.f,
            &psi,
            inner,
            &start,
        )?;
        if !report.converged {
            return Err(Error::InnerNotConverged {
                outer_iteration: k,
                residual: report.kkt_residual,
            });
        }
        let next = report.solution;
        let (mut up, mut down) = (0.0f64, 0.0f64);
        for (a, b) in next.values().iter().zip(y.values()) {
            up = up.max(a - b);
            down = down.max(b - a);
        }
        match ordering {
            Ordering::NonDecreasing if down > ORDER_TOL => {
                return Err(Error::OrderingViolation {
                    iteration: k,
                    violation: down,
                })
            }
            Ordering::NonIncreasing if up > ORDER_TOL => {
                return Err(Error::OrderingViolation {
                    iteration: k,
                    violation: up,
                })
            }
            _ => {}
        }
        rises |= up > ORDER_TOL;
        drops |= down > ORDER_TOL;
        let step = up.max(down);
        steps.push(step);
        y = next;
        if step <= outer.tol {
            converged = true;
            break;
        }
    }

    let ratios: Vec<f64> = steps
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    let tail = if ratios.len() > 2 {
        &ratios[2..]
    } else {
        &ratios[..]
    };
    let rho_observed = tail.iter().copied().fold(0.0, f64::max);
    let monotone_trace = match (rises, drops) {
        (_, false) => MonotoneTrace::Increasing,
        (false, true) => MonotoneTrace::Decreasing,
        (true, true) => MonotoneTrace::None,
    };
    Ok(QVIReport {
        solution: y,
        outer_iterations: steps.len(),
        step_norms: steps,
        ratios,
        rho_observed,
        converged,
        monotone_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundaryCondition, Mesh, NormKind, NormTag};
    use crate::obstacle::KernelKind;
    use crate::operators::ConstantsMethod;

    fn example(n: usize) -> QVIProblem {
        let mesh = Mesh::new(n, BoundaryCondition::Neumann).unwrap();
        let op = LinearEllipticOperator::assemble(mesh, |_| 1.0, |_| 1.0).unwrap();
        QVIProblem::new(
            op.into(),
            GridFunction::constant(mesh, 1.0),
            ObstacleMap::constant_mean(mesh, 0.5, 0.25).unwrap(),
            Some(GridFunction::constant(mesh, 1.0)),
        )
        .unwrap()
    }

    fn inner(problem: &QVIProblem) -> VIParams {
        VIParams::for_mesh(problem.operator.mesh())
    }

    fn plateau(y: &GridFunction, value: f64, tol: f64) {
        for v in y.values() {
            assert!((v - value).abs() <= tol, "{v} vs {value}");
        }
    }

    fn constants(c: f64, l_total: f64, gamma: f64, l_n: f64) -> OperatorConstants {
        OperatorConstants {
            c,
            lipschitz: l_total,
            gamma,
            lipschitz_nonlinear: l_n,
            norm: NormTag::H1,
            method: ConstantsMethod::Eig,
        }
    }

    #[test]
    fn certificate_arithmetic() {
        let cert = contraction_certificate(&constants(1.0, 1.0, 0.0, 0.0), 0.25);
        assert!((cert.rho - 0.25).abs() < 1e-15 && cert.smallness_ok);
        let cert = contraction_certificate(&constants(1.0, 1.0, 0.0, 0.0), 1.5);
        assert!((cert.rho - 1.5).abs() < 1e-15 && !cert.smallness_ok);
        let cert = contraction_certificate(&constants(1.0, 1.2, 0.5, 0.2), 0.1);
        assert!((cert.rho - 0.24).abs() < 1e-15 && cert.smallness_ok);
        let cert = contraction_certificate(&constants(1.0, 1.0, 1.0, 0.0), 0.1);
        assert!(!cert.smallness_ok);
        assert!(cert.stability_constant().is_err());
    }

    #[test]
    fn example_converges_to_two_thirds_at_rate_one_quarter() {
        let p = example(32);
        let y0 = GridFunction::zeros(*p.operator.mesh());
        let rep = solve_qvi_fixed_point(&p, &y0, &OuterParams::default(), &inner(&p)).unwrap();
        assert!(rep.converged);
        plateau(&rep.solution, 2.0 / 3.0, 1e-6);
        // steps of C_{k+1} = 1/2 + C_k/4 from 0
        assert!((rep.step_norms[0] - 0.5).abs() < 1e-9);
        assert!((rep.step_norms[1] - 0.125).abs() < 1e-9);
        for r in &rep.ratios[..rep.ratios.len() - 1] {
            assert!((r - 0.25).abs() <= 0.02, "{r}");
        }
        assert!(rep.rho_observed <= 0.25 + 0.05);
        assert_eq!(rep.monotone_trace, MonotoneTrace::Increasing);
    }

    #[test]
    fn minimal_and_maximal_meet() {
        let p = example(16);
        let params = OuterParams::default();
        let m = solve_qvi_minimal(&p, &params, &inner(&p)).unwrap();
        let big = solve_qvi_maximal(&p, &params, &inner(&p)).unwrap();
        plateau(&m.solution, 2.0 / 3.0, 1e-6);
        plateau(&big.solution, 2.0 / 3.0, 1e-6);
        assert_eq!(big.monotone_trace, MonotoneTrace::Decreasing);
        // ȳ = 1, Φ(1) = 3/4, so the first step is 1/4
        assert!((big.step_norms[0] - 0.25).abs() < 1e-9);
        assert!(m.solution.distance(&big.solution, NormKind::Sup).unwrap() <= 2.0 * params.tol);
    }

    #[test]
    fn zero_force_gives_zero_minimal_solution() {
        let p = example(8);
        let p = p
            .with_force(GridFunction::zeros(*p.operator.mesh()))
            .unwrap();
        let rep = solve_qvi_minimal(&p, &OuterParams::default(), &inner(&p)).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.outer_iterations, 1);
        plateau(&rep.solution, 0.0, 0.0);
    }

    #[test]
    fn regularized_plateaus() {
        let p = example(16);
        let params = OuterParams::default();
        for (eps, value) in [(1.0, 0.5), (0.1, 2.0 / 3.0), (0.5, 2.0 / 3.0)] {
            let rep = solve_qvi_regularized(&p, eps, 0.0, None, &params, &inner(&p)).unwrap();
            plateau(&rep.solution, value, 1e-6);
        }
    }

    #[test]
    fn fixed_obstacle_needs_one_correction() {
        let mesh = Mesh::new(32, BoundaryCondition::Dirichlet).unwrap();
        let op = LinearEllipticOperator::assemble(mesh, |_| 1.0, |_| 0.0).unwrap();
        let p = QVIProblem::new(
            op.into(),
            GridFunction::constant(mesh, 1.0),
            ObstacleMap::fixed(GridFunction::constant(mesh, 0.05)),
            None,
        )
        .unwrap();
        let rep = solve_qvi_fixed_point(
            &p,
            &GridFunction::zeros(mesh),
            &OuterParams::default(),
            &inner(&p),
        )
        .unwrap();
        assert!(rep.converged);
        assert_eq!(rep.outer_iterations, 2);
        assert_eq!(rep.step_norms[1], 0.0);
    }

    #[test]
    fn kernel_problem_minimal_iterates_increase() {
        let mesh = Mesh::new(32, BoundaryCondition::Dirichlet).unwrap();
        let op = LinearEllipticOperator::assemble(mesh, |_| 1.0, |_| 1.0).unwrap();
        let obstacle = ObstacleMap::kernel(
            GridFunction::constant(mesh, 0.5),
            0.5,
            KernelKind::Gauss { sigma: 0.2 },
        )
        .unwrap();
        let p = QVIProblem::new(
            op.into(),
            GridFunction::constant(mesh, 10.0),
            obstacle,
            None,
        )
        .unwrap();
        let rep = solve_qvi_minimal(&p, &OuterParams::default(), &inner(&p)).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.monotone_trace, MonotoneTrace::Increasing);
    }

    #[test]
    fn maximal_without_upper_force_is_rejected() {
        let p = example(8);
        let p = QVIProblem::new(p.operator, p.f, p.obstacle, None).unwrap();
        assert!(matches!(
            solve_qvi_maximal(&p, &OuterParams::default(), &VIParams::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn upper_force_must_dominate() {
        let p = example(8);
        let mesh = *p.operator.mesh();
        let r = QVIProblem::new(
            p.operator,
            p.f,
            p.obstacle,
            Some(GridFunction::constant(mesh, 0.5)),
        );
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn report_csv_layout() {
        let p = example(8);
        let rep = solve_qvi_minimal(&p, &OuterParams::default(), &inner(&p)).unwrap();
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], QVIReport::CSV_HEADER);
        assert!(lines[1].starts_with("1,5.0000000000000000e-1,"));
        assert!(lines
            .last()
            .unwrap()
            .starts_with("# summary outer_iterations="));
        assert_eq!(lines.len(), rep.outer_iterations + 2);
    }
}
