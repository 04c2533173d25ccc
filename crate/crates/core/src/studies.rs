//! Parameter studies: regularization paths, operator perturbations, mesh
//! refinement, data robustness and stability-bound checks, with log-log rate
//! fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{format_real, GridFunction, Mesh, NormKind, NormTag};
use crate::operators::{add_regularization, estimate_constants, Operator};
use crate::qvi_solver::{
    contraction_certificate, solve_qvi_fixed_point, solve_qvi_minimal, OuterParams, QVIProblem,
    QVIReport,
};
use crate::vi_solver::VIParams;

/// Errors below this are treated as exact reproduction and left out of fits.
pub const EXACT_THRESHOLD: f64 = 1e-10;

/// Slack for componentwise ordering verdicts.
const ORDER_TOL: f64 = 1e-8;

/// Least-squares line through `(log10 x, log10 y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Points used in the fit.
    pub points: Vec<(f64, f64)>,
    /// Points dropped because `y` was below the exclusion threshold.
    pub exact_hits: usize,
}

/// Fits `y ≈ 10^intercept · x^slope`, skipping points with
/// `y < exclude_zero_below`.
pub fn fit_rate(points: &[(f64, f64)], exclude_zero_below: f64) -> Result<RateFit> {
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0) || !(*y >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "rate fit needs x > 0 and y ≥ 0, got ({x}, {y})"
        )));
    }
    let used: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(_, y)| y >= exclude_zero_below && y > 0.0)
        .collect();
    let exact_hits = points.len() - used.len();
    if used.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} usable points after dropping {exact_hits} exact hits; need 3",
            used.len()
        )));
    }
    let logs: Vec<(f64, f64)> = used.iter().map(|(x, y)| (x.log10(), y.log10())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all parameters coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = logs
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let ss_tot: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        points: used,
        exact_hits,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub parameter: f64,
    pub error: f64,
    pub aux: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub name: String,
    pub seed: u64,
    /// How the reference solution was obtained, e.g. `exact` or `eps=1e-6`.
    pub reference: String,
    pub aux_names: Vec<String>,
    pub rows: Vec<StudyRow>,
    pub fit: Option<RateFit>,
    pub exact_hits: usize,
    pub verdicts: Vec<(String, bool)>,
}

impl StudyResult {
    fn new(name: &str, seed: u64, reference: String, aux_names: &[&str]) -> Self {
        Self {
            name: name.into(),
            seed,
            reference,
            aux_names: aux_names.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            fit: None,
            exact_hits: 0,
            verdicts: Vec::new(),
        }
    }

    pub fn verdict(&self, name: &str) -> Option<bool> {
        self.verdicts
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    pub fn all_verdicts_pass(&self) -> bool {
        self.verdicts.iter().all(|(_, v)| *v)
    }

    /// Fits the rows when enough of them carry nonzero errors; otherwise
    /// only the exact-hit count is recorded.
    fn fit_rows(&mut self) {
        let points: Vec<(f64, f64)> = self.rows.iter().map(|r| (r.parameter, r.error)).collect();
        self.exact_hits = points.iter().filter(|p| p.1 < EXACT_THRESHOLD).count();
        self.fit = fit_rate(&points, EXACT_THRESHOLD).ok();
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# study={} seed={} reference={}\n",
            self.name, self.seed, self.reference
        );
        out.push_str("parameter,error");
        for name in &self.aux_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format_real(row.parameter));
            out.push(',');
            out.push_str(&format_real(row.error));
            for a in &row.aux {
                out.push(',');
                out.push_str(&format_real(*a));
            }
            out.push('\n');
        }
        match &self.fit {
            Some(fit) => out.push_str(&format!(
                "# fit slope={} r2={} exact_hits={}\n",
                format_real(fit.slope),
                format_real(fit.r2),
                self.exact_hits
            )),
            None => out.push_str(&format!("# fit none exact_hits={}\n", self.exact_hits)),
        }
        for (name, v) in &self.verdicts {
            out.push_str(&format!("# verdict {name}={v}\n"));
        }
        out
    }
}

/// Solver settings shared by every parameter point of a study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyOptions {
    pub outer: OuterParams,
    pub inner: VIParams,
    /// Replace `inner.omega` by the optimal SOR value of each mesh.
    pub auto_omega: bool,
    /// Upper bound on parameter points solved concurrently.
    pub jobs: usize,
    pub seed: u64,
    /// Samples used when constants must be estimated.
    pub trials: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            outer: OuterParams::default(),
            inner: VIParams::default(),
            auto_omega: true,
            jobs: 1,
            seed: 42,
            trials: 200,
        }
    }
}

impl StudyOptions {
    pub fn inner_for(&self, mesh: &Mesh) -> VIParams {
        let mut inner = self.inner;
        if self.auto_omega {
            inner.omega = VIParams::optimal_omega(mesh);
        }
        inner
    }

    /// Runs `task` on every item with at most `jobs` workers, keeping the
    /// results in input order.
    fn map<T, R, F>(&self, items: &[T], task: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> Result<R> + Sync + Send,
    {
        if self.jobs <= 1 {
            return items.iter().map(task).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
        pool.install(|| items.par_iter().map(task).collect())
    }
}

/// Reference solution for error measurements.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Exact(GridFunction),
    /// Solve the regularized problem at this (small) ε.
    SolveAt(f64),
}

fn check_decreasing(list: &[f64], what: &str) -> Result<()> {
    if list.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{what} needs at least 4 entries, got {}",
            list.len()
        )));
    }
    if list.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "{what} entries must be positive"
        )));
    }
    if list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter(format!(
            "{what} must be strictly decreasing"
        )));
    }
    Ok(())
}

fn converged(report: QVIReport, what: &str) -> Result<GridFunction> {
    if !report.converged {
        return Err(Error::OuterNotConverged {
            what: what.into(),
            iterations: report.outer_iterations,
        });
    }
    Ok(report.solution)
}

fn regularized_solution(
    problem: &QVIProblem,
    eps: f64,
    opts: &StudyOptions,
) -> Result<(GridFunction, usize)> {
    let op = add_regularization(&problem.operator, eps, 0.0, None)?;
    minimal_solution(&problem.with_operator(op)?, opts, &format!("eps={eps}"))
}

fn minimal_solution(
    problem: &QVIProblem,
    opts: &StudyOptions,
    what: &str,
) -> Result<(GridFunction, usize)> {
    let inner = opts.inner_for(problem.operator.mesh());
    let report = solve_qvi_minimal(problem, &opts.outer, &inner)?;
    let iterations = report.outer_iterations;
    Ok((converged(report, what)?, iterations))
}

fn ordered_chain(solutions: &[GridFunction]) -> Result<bool> {
    for w in solutions.windows(2) {
        if !w[0].leq(&w[1], ORDER_TOL)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Regularized solves `y_ε` for each ε (strictly decreasing, at least four),
/// with h1 errors against the reference.
///
/// Verdicts: `eps_monotone` (`y_ε` non-increasing in ε) and
/// `errors_nonincreasing` (errors shrink as ε does).
pub fn run_regularization_path(
    problem: &QVIProblem,
    eps_list: &[f64],
    reference: &Reference,
    opts: &StudyOptions,
) -> Result<StudyResult> {
    check_decreasing(eps_list, "eps_list")?;
    let (reference, label) = match reference {
        Reference::Exact(y) => (y.clone(), "exact".to_string()),
        Reference::SolveAt(eps) => (
            regularized_solution(problem, *eps, opts)?.0,
            format!("eps={eps}"),
        ),
    };
    let solved = opts.map(eps_list, |&eps| regularized_solution(problem, eps, opts))?;
    let mut result = StudyResult::new(
        "regpath",
        opts.seed,
        label,
        &["sup_error", "outer_iterations"],
    );
    for (&eps, (y, iterations)) in eps_list.iter().zip(&solved) {
        result.rows.push(StudyRow {
            parameter: eps,
            error: y.distance(&reference, NormKind::H1)?,
            aux: vec![y.distance(&reference, NormKind::Sup)?, *iterations as f64],
        });
    }
    // ε decreases along the list, so solutions should increase
    let solutions: Vec<GridFunction> = solved.into_iter().map(|s| s.0).collect();
    let monotone = ordered_chain(&solutions)?;
    let shrinking = result
        .rows
        .windows(2)
        .all(|w| w[1].error <= w[0].error + EXACT_THRESHOLD);
    result.verdicts.push(("eps_monotone".into(), monotone));
    result
        .verdicts
        .push(("errors_nonincreasing".into(), shrinking));
    result.fit_rows();
    Ok(result)
}

/// Families `A_δ` with `A_0 = A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationFamily {
    /// `A + δI`.
    ScaledIdentity,
    /// Reaction coefficient `a0 + δ` (linear operators only).
    Coefficient,
}

impl std::str::FromStr for PerturbationFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "scaled_identity" => Ok(Self::ScaledIdentity),
            "coefficient" => Ok(Self::Coefficient),
            other => Err(Error::Parse(format!(
                "unknown perturbation family `{other}` (expected scaled_identity or coefficient)"
            ))),
        }
    }
}

impl std::fmt::Display for PerturbationFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ScaledIdentity => "scaled_identity",
            Self::Coefficient => "coefficient",
        })
    }
}

fn perturbed_operator(op: &Operator, family: PerturbationFamily, delta: f64) -> Result<Operator> {
    match family {
        PerturbationFamily::ScaledIdentity => add_regularization(op, delta, 0.0, None),
        PerturbationFamily::Coefficient => {
            let linear = op.linear_form().ok_or_else(|| {
                Error::InvalidParameter("coefficient family needs a linear operator".into())
            })?;
            Ok(linear.with_reaction_shift(delta)?.into())
        }
    }
}

/// Minimal solutions for `A_δ` compared in h1 with the unperturbed minimal
/// solution. Verdict `ordered_solutions` (scaled identity only): solutions
/// increase as δ decreases.
pub fn run_operator_perturbation(
    problem: &QVIProblem,
    family: PerturbationFamily,
    delta_list: &[f64],
    opts: &StudyOptions,
) -> Result<StudyResult> {
    check_decreasing(delta_list, "delta_list")?;
    let (reference, _) = minimal_solution(problem, opts, "unperturbed")?;
    let solved = opts.map(delta_list, |&delta| {
        let op = perturbed_operator(&problem.operator, family, delta)?;
        minimal_solution(&problem.with_operator(op)?, opts, &format!("delta={delta}"))
    })?;
    let mut result = StudyResult::new(
        &format!("perturb_{family}"),
        opts.seed,
        "delta=0".into(),
        &["sup_error", "outer_iterations"],
    );
    for (&delta, (y, iterations)) in delta_list.iter().zip(&solved) {
        result.rows.push(StudyRow {
            parameter: delta,
            error: y.distance(&reference, NormKind::H1)?,
            aux: vec![y.distance(&reference, NormKind::Sup)?, *iterations as f64],
        });
    }
    if family == PerturbationFamily::ScaledIdentity {
        let solutions: Vec<GridFunction> = solved.into_iter().map(|s| s.0).collect();
        result
            .verdicts
            .push(("ordered_solutions".into(), ordered_chain(&solutions)?));
    }
    result.fit_rows();
    Ok(result)
}

/// Self-convergence under refinement: the finest mesh in `n_list` is the
/// reference, injected onto each coarser mesh and compared in l2. The
/// parameter is the mesh width `h`.
pub fn run_mesh_refinement(
    template: &(dyn Fn(usize) -> Result<QVIProblem> + Sync),
    n_list: &[usize],
    opts: &StudyOptions,
) -> Result<StudyResult> {
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "n_list must be strictly increasing".into(),
        ));
    }
    let finest = *n_list
        .last()
        .ok_or_else(|| Error::InsufficientData("n_list is empty".into()))?;
    if let Some(n) = n_list.iter().find(|&&n| n == 0 || finest % n != 0) {
        return Err(Error::Nesting(format!(
            "{n} does not divide the finest size {finest}"
        )));
    }
    if n_list.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "n_list needs at least 4 entries, got {}",
            n_list.len()
        )));
    }
    let solved = opts.map(n_list, |&n| {
        let problem = template(n)?;
        minimal_solution(&problem, opts, &format!("n={n}"))
    })?;
    let (reference, _) = solved.last().expect("n_list is nonempty");
    let mut result = StudyResult::new(
        "refine",
        opts.seed,
        format!("n={finest}"),
        &["n", "outer_iterations"],
    );
    for (&n, (y, iterations)) in n_list.iter().zip(&solved).take(n_list.len() - 1) {
        let restricted = reference.inject(y.mesh())?;
        result.rows.push(StudyRow {
            parameter: y.mesh().spacing(),
            error: y.distance(&restricted, NormKind::L2)?,
            aux: vec![n as f64, *iterations as f64],
        });
    }
    result.fit_rows();
    Ok(result)
}

/// Perturbs the force by `+δ_f` and the obstacle base level by `+δ_Φ`; rows
/// use the total `δ_f + δ_Φ` as parameter and the h1 distance to the
/// unperturbed solution as error. Either list may be empty; if both are
/// given they must have equal length.
///
/// Verdict `monotone_in_f`: larger perturbations give componentwise larger
/// solutions, all above the unperturbed one.
pub fn run_data_robustness(
    problem: &QVIProblem,
    f_deltas: &[f64],
    phi_deltas: &[f64],
    opts: &StudyOptions,
) -> Result<StudyResult> {
    let count = f_deltas.len().max(phi_deltas.len());
    if !f_deltas.is_empty() && !phi_deltas.is_empty() && f_deltas.len() != phi_deltas.len() {
        return Err(Error::InvalidParameter(
            "f_deltas and phi_deltas must have the same length".into(),
        ));
    }
    if !f_deltas.is_empty() {
        check_decreasing(f_deltas, "f_deltas")?;
    }
    if !phi_deltas.is_empty() {
        check_decreasing(phi_deltas, "phi_deltas")?;
    }
    if count == 0 {
        return Err(Error::InsufficientData("no perturbations given".into()));
    }
    let pairs: Vec<(f64, f64)> = (0..count)
        .map(|i| {
            (
                f_deltas.get(i).copied().unwrap_or(0.0),
                phi_deltas.get(i).copied().unwrap_or(0.0),
            )
        })
        .collect();
    let (reference, _) = minimal_solution(problem, opts, "unperturbed")?;
    let solved = opts.map(&pairs, |&(df, dphi)| {
        let perturbed = problem
            .with_force(problem.f.shift(df))?
            .with_obstacle(problem.obstacle.shifted(dphi))?;
        minimal_solution(&perturbed, opts, &format!("df={df} dphi={dphi}"))
    })?;
    let mut result = StudyResult::new(
        "robust",
        opts.seed,
        "unperturbed".into(),
        &["f_delta", "phi_delta", "outer_iterations"],
    );
    for (&(df, dphi), (y, iterations)) in pairs.iter().zip(&solved) {
        result.rows.push(StudyRow {
            parameter: df + dphi,
            error: y.distance(&reference, NormKind::H1)?,
            aux: vec![df, dphi, *iterations as f64],
        });
    }
    let mut chain: Vec<GridFunction> = vec![reference];
    chain.extend(solved.into_iter().rev().map(|s| s.0));
    result
        .verdicts
        .push(("monotone_in_f".into(), ordered_chain(&chain)?));
    result.fit_rows();
    Ok(result)
}

/// `count` force pairs `(f + u₁, f + u₂)` with `u₁, u₂` drawn uniformly in
/// `[0, amplitude]` at every dof.
pub fn random_force_pairs(
    f: &GridFunction,
    count: usize,
    amplitude: f64,
    seed: u64,
) -> Result<Vec<(GridFunction, GridFunction)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Result<GridFunction> {
        let v = f
            .values()
            .iter()
            .map(|x| x + amplitude * rng.gen::<f64>())
            .collect();
        GridFunction::new(*f.mesh(), v)
    };
    (0..count)
        .map(|_| Ok((draw(&mut rng)?, draw(&mut rng)?)))
        .collect()
}

/// Checks `‖y₁ − y₂‖_h1 ≤ K‖f₁ − f₂‖_{h1,*}` with `K` from the contraction
/// certificate (h1 operator constants, obstacle bound measured in h1). Rows
/// carry the dual-norm force distance as parameter, the solution distance as
/// error, then the bound and their ratio (0 for identical forces).
///
/// Verdict `bound_holds`: every ratio ≤ 1.05.
pub fn run_stability_bound_check(
    problem: &QVIProblem,
    pairs: &[(GridFunction, GridFunction)],
    opts: &StudyOptions,
) -> Result<StudyResult> {
    const SLACK: f64 = 1.05;
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no force pairs given".into()));
    }
    let constants = estimate_constants(&problem.operator, NormTag::H1, opts.trials, opts.seed)?;
    let certificate =
        contraction_certificate(&constants, problem.obstacle.lipschitz_bound(NormTag::H1));
    let k = certificate.stability_constant()?;
    let inner = opts.inner_for(problem.operator.mesh());
    let zero = GridFunction::zeros(*problem.operator.mesh());
    let solve = |f: &GridFunction| -> Result<GridFunction> {
        let report =
            solve_qvi_fixed_point(&problem.with_force(f.clone())?, &zero, &opts.outer, &inner)?;
        converged(report, "stability pair")
    };
    let rows = opts.map(pairs, |(f1, f2)| {
        let (y1, y2) = (solve(f1)?, solve(f2)?);
        let force_gap = f1.sub(f2)?.dual_norm(NormTag::H1);
        let distance = y1.distance(&y2, NormKind::H1)?;
        let bound = k * force_gap;
        let ratio = if bound > 0.0 {
            distance / bound
        } else if distance <= EXACT_THRESHOLD {
            0.0
        } else {
            f64::INFINITY
        };
        Ok(StudyRow {
            parameter: force_gap,
            error: distance,
            aux: vec![bound, ratio],
        })
    })?;
    let mut result = StudyResult::new(
        "stability",
        opts.seed,
        format!("rho={}", format_real(certificate.rho)),
        &["bound", "ratio"],
    );
    let holds = rows.iter().all(|r| r.aux[1] <= SLACK);
    result.rows = rows;
    result.verdicts.push(("bound_holds".into(), holds));
    result.exact_hits = result
        .rows
        .iter()
        .filter(|r| r.error < EXACT_THRESHOLD)
        .count();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryCondition;
    use crate::obstacle::ObstacleMap;
    use crate::operators::LinearEllipticOperator;

    #[test]
    fn exact_lines() {
        let fit = fit_rate(&[(1.0, 1.0), (2.0, 2.0), (4.0, 4.0)], 0.0).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12 && (fit.r2 - 1.0).abs() < 1e-12);
        let fit = fit_rate(&[(1.0, 1.0), (4.0, 16.0), (16.0, 256.0)], 0.0).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_line_matches_closed_form() {
        let pts = [(1.0f64, 1.0f64), (2.0, 2.1), (4.0, 3.9)];
        let fit = fit_rate(&pts, 0.0).unwrap();
        // three equally spaced log-abscissae: slope = (y3 − y1)/(x3 − x1)
        let expected = (3.9f64.log10() - 0.0) / 4.0f64.log10();
        assert!((fit.slope - expected).abs() < 1e-12);
        assert!(fit.slope > 0.9 && fit.slope < 1.1 && fit.r2 > 0.99);
    }

    #[test]
    fn zero_errors_count_as_exact_hits() {
        let pts = [
            (1.0, 1.0),
            (0.5, 0.5),
            (0.25, 0.25),
            (0.1, 0.0),
            (0.05, 1e-12),
        ];
        let fit = fit_rate(&pts, EXACT_THRESHOLD).unwrap();
        assert_eq!(fit.exact_hits, 2);
        assert_eq!(fit.points.len(), 3);
        assert!(matches!(
            fit_rate(&pts[2..], EXACT_THRESHOLD),
            Err(Error::InsufficientData(_))
        ));
    }

    fn example() -> QVIProblem {
        let mesh = Mesh::new(16, BoundaryCondition::Neumann).unwrap();
        let op = LinearEllipticOperator::assemble(mesh, |_| 1.0, |_| 1.0).unwrap();
        QVIProblem::new(
            op.into(),
            GridFunction::constant(mesh, 1.0),
            ObstacleMap::constant_mean(mesh, 0.5, 0.25).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn example_regularization_path() {
        let p = example();
        let exact = GridFunction::constant(*p.operator.mesh(), 2.0 / 3.0);
        let eps = [1.0, 0.75, 0.6, 0.5, 0.25, 0.1];
        // a tight outer tolerance puts the constrained plateaus within the
        // exact-hit threshold
        let opts = StudyOptions {
            outer: OuterParams {
                tol: 1e-13,
                max_iter: 200,
            },
            ..StudyOptions::default()
        };
        let r = run_regularization_path(&p, &eps, &Reference::Exact(exact), &opts).unwrap();
        let expected = [1.0 / 6.0, 2.0 / 21.0, 1.0 / 24.0, 0.0, 0.0, 0.0];
        for (row, e) in r.rows.iter().zip(expected) {
            assert!((row.error - e).abs() < 1e-6, "{} vs {e}", row.error);
        }
        assert_eq!(r.verdict("eps_monotone"), Some(true));
        assert_eq!(r.verdict("errors_nonincreasing"), Some(true));
        assert_eq!(r.exact_hits, 3);
        assert!(r.fit.is_some());
    }

    #[test]
    fn short_lists_are_rejected() {
        let p = example();
        let opts = StudyOptions::default();
        assert!(matches!(
            run_regularization_path(&p, &[1.0, 0.5], &Reference::SolveAt(1e-6), &opts),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            run_operator_perturbation(&p, PerturbationFamily::ScaledIdentity, &[0.0], &opts),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn nesting_is_checked_before_length() {
        let template = |n: usize| -> Result<QVIProblem> {
            let mesh = Mesh::new(n, BoundaryCondition::Neumann)?;
            let op = LinearEllipticOperator::assemble(mesh, |_| 1.0, |_| 1.0)?;
            QVIProblem::new(
                op.into(),
                GridFunction::constant(mesh, 1.0),
                ObstacleMap::constant_mean(mesh, 0.5, 0.25)?,
                None,
            )
        };
        assert!(matches!(
            run_mesh_refinement(&template, &[8, 12], &StudyOptions::default()),
            Err(Error::Nesting(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let mut r = StudyResult::new("demo", 7, "exact".into(), &["aux1"]);
        r.rows.push(StudyRow {
            parameter: 0.5,
            error: 0.25,
            aux: vec![3.0],
        });
        r.verdicts.push(("ok".into(), true));
        r.exact_hits = 0;
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# study=demo seed=7 reference=exact");
        assert_eq!(lines[1], "parameter,error,aux1");
        assert_eq!(
            lines[2],
            "5.0000000000000000e-1,2.5000000000000000e-1,3.0000000000000000e0"
        );
        assert_eq!(lines[3], "# fit none exact_hits=0");
        assert_eq!(lines[4], "# verdict ok=true");
    }

    #[test]
    fn parallel_rows_match_sequential() {
        let p = example();
        let eps = [1.0, 0.5, 0.25, 0.125];
        let seq = StudyOptions::default();
        let par = StudyOptions { jobs: 3, ..seq };
        let a = run_regularization_path(&p, &eps, &Reference::SolveAt(1e-6), &seq).unwrap();
        let b = run_regularization_path(&p, &eps, &Reference::SolveAt(1e-6), &par).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }
}
