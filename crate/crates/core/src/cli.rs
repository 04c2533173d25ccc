//! Experiment configuration files and the `qvar` subcommands.
//!
//! Configuration documents are INI-style: `key = value` lines, `#` comments,
//! optional top-level `seed` and `out`, then `[problem]`, `[solver]` and
//! `[study]` sections.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{format_real, BoundaryCondition, GridFunction, Mesh, NormKind, NormTag};
use crate::obstacle::KernelKind;
use crate::operators::{estimate_constants, LinearEllipticOperator, Operator};
use crate::problems::{exact_solution, ForceSpec, ObstacleKind, ProblemName, ProblemSpec};
use crate::qvi_solver::{
    contraction_certificate, solve_qvi_fixed_point, solve_qvi_regularized, ContractionCertificate,
    OuterParams, QVIProblem, QVIReport,
};
use crate::studies::{
    run_data_robustness, run_mesh_refinement, run_operator_perturbation, run_regularization_path,
    PerturbationFamily, Reference, StudyOptions, StudyResult,
};
use crate::vi_solver::{
    kkt_residual, solve_vi_active_set_oracle, solve_vi_psor, Damping, VIParams, VISolveReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VERDICT: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub tol_outer: f64,
    pub tol_inner: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// `None` selects the optimal SOR value for each mesh.
    pub omega: Option<f64>,
    pub tau: Damping,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_outer: 1e-8,
            tol_inner: 1e-10,
            max_outer: 200,
            max_inner: 10_000,
            omega: None,
            tau: Damping::Auto,
        }
    }
}

impl SolverConfig {
    pub fn outer(&self) -> OuterParams {
        OuterParams {
            tol: self.tol_outer,
            max_iter: self.max_outer,
        }
    }

    pub fn inner_for(&self, mesh: &Mesh) -> VIParams {
        VIParams {
            tol: self.tol_inner,
            max_iter: self.max_inner,
            omega: self.omega.unwrap_or_else(|| VIParams::optimal_omega(mesh)),
            tau: self.tau,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    Exact,
    Smallest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub eps_list: Vec<f64>,
    pub delta_list: Vec<f64>,
    pub family: PerturbationFamily,
    pub n_list: Vec<usize>,
    pub f_deltas: Vec<f64>,
    pub phi_deltas: Vec<f64>,
    /// `None` means exact when the problem has a closed-form solution.
    pub reference: Option<ReferenceKind>,
    pub reference_eps: f64,
    /// Regularization added to the operator for `solve`, `trace` and
    /// `robust`.
    pub eps: f64,
    pub trials: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            eps_list: vec![0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625],
            delta_list: vec![0.4, 0.2, 0.1, 0.05],
            family: PerturbationFamily::ScaledIdentity,
            n_list: vec![8, 16, 32, 64, 128, 256],
            f_deltas: vec![0.2, 0.1, 0.05, 0.025],
            phi_deltas: Vec::new(),
            reference: None,
            reference_eps: 1e-6,
            eps: 0.0,
            trials: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub solver: SolverConfig,
    pub study: StudyConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::new(ProblemName::Example1d),
            solver: SolverConfig::default(),
            study: StudyConfig::default(),
            seed: 42,
            out: PathBuf::from("."),
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Top,
    Problem,
    Solver,
    Study,
}

fn parse_num<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("cannot parse `{value}`"))
}

fn parse_real(value: &str) -> std::result::Result<f64, String> {
    let v: f64 = parse_num(value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{value}` is not finite"))
    }
}

fn nonneg(value: &str) -> std::result::Result<f64, String> {
    let v = parse_real(value)?;
    if v < 0.0 {
        return Err(format!("must be ≥ 0, got {v}"));
    }
    Ok(v)
}

fn positive(value: &str) -> std::result::Result<f64, String> {
    let v = parse_real(value)?;
    if v <= 0.0 {
        return Err(format!("must be > 0, got {v}"));
    }
    Ok(v)
}

fn open_interval_0_2(value: &str) -> std::result::Result<f64, String> {
    let v = parse_real(value)?;
    if !(v > 0.0 && v < 2.0) {
        return Err(format!("must lie in (0, 2), got {v}"));
    }
    Ok(v)
}

fn count(value: &str) -> std::result::Result<usize, String> {
    let v: usize = parse_num(value)?;
    if v == 0 {
        return Err("must be ≥ 1".into());
    }
    Ok(v)
}

fn real_list(value: &str) -> std::result::Result<Vec<f64>, String> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| nonneg(v.trim())).collect()
}

fn lib_err(e: Error) -> String {
    match e {
        Error::Parse(msg) => msg,
        other => other.to_string(),
    }
}

/// Parses and validates a configuration document. Unknown keys, duplicate
/// keys and out-of-range values are reported with their line number.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut section = Section::Top;
    let mut seen: Vec<(String, usize)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |key: &str, message: String| Error::Config {
            line: line_no,
            key: key.to_string(),
            message,
        };
        if let Some(inner) = line.strip_prefix('[') {
            let name = inner
                .strip_suffix(']')
                .ok_or_else(|| err(line, "unterminated section header".into()))?
                .trim();
            section = match name {
                "problem" => Section::Problem,
                "solver" => Section::Solver,
                "study" => Section::Study,
                other => return Err(err(other, "unknown section".into())),
            };
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line, "expected `key = value`".into()))?;
        let (key, value) = (key.trim(), value.trim());
        let qualified = match section {
            Section::Top => key.to_string(),
            Section::Problem => format!("problem.{key}"),
            Section::Solver => format!("solver.{key}"),
            Section::Study => format!("study.{key}"),
        };
        if let Some((_, first)) = seen.iter().find(|(k, _)| *k == qualified) {
            return Err(err(
                key,
                format!("duplicate key (first set on line {first})"),
            ));
        }
        seen.push((qualified, line_no));

        let applied: std::result::Result<(), String> = (|| {
            let p = &mut cfg.problem;
            let s = &mut cfg.solver;
            let st = &mut cfg.study;
            match (section, key) {
                (Section::Top, "seed") => cfg.seed = parse_num(value)?,
                (Section::Top, "out") => cfg.out = PathBuf::from(value),
                (Section::Problem, "name") => p.name = value.parse().map_err(lib_err)?,
                (Section::Problem, "n") => {
                    let n: usize = parse_num(value)?;
                    if n < 2 {
                        return Err(format!("must be ≥ 2, got {n}"));
                    }
                    p.n = n;
                }
                (Section::Problem, "bc") => {
                    p.bc = Some(value.parse::<BoundaryCondition>().map_err(lib_err)?)
                }
                (Section::Problem, "p") => {
                    let v = parse_real(value)?;
                    if v < 2.0 {
                        return Err(format!("must be ≥ 2, got {v}"));
                    }
                    p.p = Some(v);
                }
                (Section::Problem, "eps_op") => p.eps_op = Some(nonneg(value)?),
                (Section::Problem, "lambda") => p.lambda = Some(parse_real(value)?),
                (Section::Problem, "a0") => p.a0 = Some(nonneg(value)?),
                (Section::Problem, "f") => p.f = Some(value.parse().map_err(lib_err)?),
                (Section::Problem, "F") => {
                    p.upper_force = Some(value.parse::<ForceSpec>().map_err(lib_err)?)
                }
                (Section::Problem, "obstacle.kind") => {
                    p.obstacle_kind = Some(value.parse::<ObstacleKind>().map_err(lib_err)?)
                }
                (Section::Problem, "obstacle.c0" | "c0") => p.c0 = Some(parse_real(value)?),
                (Section::Problem, "obstacle.alpha" | "alpha") => p.alpha = Some(nonneg(value)?),
                (Section::Problem, "obstacle.kernel" | "kernel") => {
                    p.kernel = Some(value.parse::<KernelKind>().map_err(lib_err)?)
                }
                (Section::Problem, "obstacle.psi" | "psi") => p.psi = Some(parse_real(value)?),
                (Section::Problem, "obstacle.psi_file" | "psi_file") => {
                    p.psi_file = Some(PathBuf::from(value))
                }
                (Section::Solver, "tol_outer") => s.tol_outer = positive(value)?,
                (Section::Solver, "tol_inner") => s.tol_inner = positive(value)?,
                (Section::Solver, "max_outer") => s.max_outer = count(value)?,
                (Section::Solver, "max_inner") => s.max_inner = count(value)?,
                (Section::Solver, "omega") => {
                    s.omega = match value {
                        "auto" => None,
                        v => Some(open_interval_0_2(v)?),
                    }
                }
                (Section::Solver, "tau") => {
                    s.tau = match value {
                        "auto" => Damping::Auto,
                        v => Damping::Fixed(open_interval_0_2(v)?),
                    }
                }
                (Section::Study, "eps_list") => st.eps_list = real_list(value)?,
                (Section::Study, "delta_list") => st.delta_list = real_list(value)?,
                (Section::Study, "family") => st.family = value.parse().map_err(lib_err)?,
                (Section::Study, "n_list") => {
                    st.n_list = value
                        .split(',')
                        .map(|v| parse_num::<usize>(v.trim()))
                        .collect::<std::result::Result<_, _>>()?
                }
                (Section::Study, "f_deltas") => st.f_deltas = real_list(value)?,
                (Section::Study, "phi_deltas") => st.phi_deltas = real_list(value)?,
                (Section::Study, "reference") => {
                    st.reference = Some(match value {
                        "exact" => ReferenceKind::Exact,
                        "smallest" => ReferenceKind::Smallest,
                        other => return Err(format!("expected exact or smallest, got `{other}`")),
                    })
                }
                (Section::Study, "reference_eps") => st.reference_eps = positive(value)?,
                (Section::Study, "eps") => st.eps = nonneg(value)?,
                (Section::Study, "trials") => st.trials = count(value)?,
                _ => return Err("unknown key".into()),
            }
            Ok(())
        })();
        applied.map_err(|message| err(key, message))?;
    }

    // cross-field checks that need the final problem
    let at = |key: &str| seen.iter().find(|(k, _)| k == key).map(|(_, l)| *l);
    if cfg.problem.name == ProblemName::PLaplacian
        && cfg.problem.bc == Some(BoundaryCondition::Neumann)
    {
        return Err(Error::Config {
            line: at("problem.bc").unwrap_or(0),
            key: "bc".into(),
            message: "the p-Laplacian problem needs dirichlet boundaries".into(),
        });
    }
    let bc = cfg
        .problem
        .bc
        .unwrap_or(cfg.problem.name.default_boundary());
    if bc == BoundaryCondition::Neumann && cfg.problem.a0 == Some(0.0) {
        return Err(Error::Config {
            line: at("problem.a0").unwrap_or(0),
            key: "a0".into(),
            message: "a0 = 0 is not elliptic with neumann boundaries".into(),
        });
    }
    Ok(cfg)
}

#[derive(Debug, Parser)]
#[command(
    name = "qvar",
    version,
    about = "Quasi-variational inequality solvers and studies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment configuration file.
    #[arg(short = 'c', long = "config", global = true)]
    pub config: Option<PathBuf>,
    /// Parameter points solved concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Overrides the configured seed and QVAR_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out` in the config).
    #[arg(short = 'o', long = "out", global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one QVI; writes solution.csv and report.csv.
    Solve,
    /// Regularization path in ε.
    Regpath,
    /// Operator perturbation study.
    Perturb,
    /// Mesh self-convergence study.
    Refine,
    /// Force and obstacle perturbation study.
    Robust,
    /// Fixed-point iteration trace with observed contraction ratio.
    Trace,
    /// Contraction certificate from estimated constants.
    Certify,
    /// Random small obstacle problems: PSOR against active-set enumeration.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 8)]
        ndof: usize,
    },
}

/// Outcome of a subcommand: the text printed to stdout and the exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: String,
    pub code: i32,
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Parse(_) => EXIT_CONFIG,
        Error::InnerNotConverged { .. }
        | Error::OuterNotConverged { .. }
        | Error::Stagnation { .. } => EXIT_NOT_CONVERGED,
        _ => EXIT_FAILURE,
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code. Diagnostics go to stderr.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            outcome.code
        }
        Err(e) => {
            eprintln!("qvar: {e}");
            exit_code(&e)
        }
    }
}

/// Loads the configuration named on the command line (defaults otherwise)
/// and applies the seed and output overrides.
pub fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
                line: 0,
                key: "config".into(),
                message: format!("cannot read {}: {e}", path.display()),
            })?;
            parse_config(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Ok(value) = std::env::var("QVAR_SEED") {
        cfg.seed = value.trim().parse().map_err(|_| Error::Config {
            line: 0,
            key: "QVAR_SEED".into(),
            message: format!("cannot parse `{value}` as a seed"),
        })?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    // relative data files are resolved next to the config file
    if let Some(dir) = common.config.as_ref().and_then(|p| p.parent()) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        let spec = &mut cfg.problem;
        if let Some(path) = spec.psi_file.as_mut() {
            fix(path);
        }
        for force in [spec.f.as_mut(), spec.upper_force.as_mut()]
            .into_iter()
            .flatten()
        {
            if let ForceSpec::File(path) = force {
                fix(path);
            }
        }
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    if cli.common.jobs == 0 {
        return Err(Error::Config {
            line: 0,
            key: "jobs".into(),
            message: "must be ≥ 1".into(),
        });
    }
    let cfg = load_config(&cli.common)?;
    std::fs::create_dir_all(&cfg.out)?;
    match &cli.command {
        Command::Solve => cmd_solve(&cfg, false),
        Command::Trace => cmd_solve(&cfg, true),
        Command::Certify => cmd_certify(&cfg),
        Command::Regpath | Command::Perturb | Command::Refine | Command::Robust => {
            cmd_study(&cli.command, &cfg, cli.common.jobs)
        }
        Command::OracleCheck { trials, ndof } => cmd_oracle(&cfg, *trials, *ndof),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

fn solve_configured(cfg: &ExperimentConfig, problem: &QVIProblem) -> Result<QVIReport> {
    let inner = cfg.solver.inner_for(problem.operator.mesh());
    let outer = cfg.solver.outer();
    if cfg.study.eps > 0.0 {
        solve_qvi_regularized(problem, cfg.study.eps, 0.0, None, &outer, &inner)
    } else {
        let zero = GridFunction::zeros(*problem.operator.mesh());
        solve_qvi_fixed_point(problem, &zero, &outer, &inner)
    }
}

fn cmd_solve(cfg: &ExperimentConfig, trace: bool) -> Result<Outcome> {
    let problem = cfg.problem.build()?;
    let report = solve_configured(cfg, &problem)?;
    let mut summary = String::new();
    if trace {
        write(&cfg.out, "trace.csv", &report.to_csv())?;
    } else {
        write(&cfg.out, "solution.csv", &report.solution.to_csv())?;
        write(&cfg.out, "report.csv", &report.to_csv())?;
    }
    let values = report.solution.values();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(*v), b.max(*v))
        });
    let _ = writeln!(
        summary,
        "problem={} n={} outer_iterations={} converged={} rho_observed={}",
        cfg.problem.name,
        cfg.problem.n,
        report.outer_iterations,
        report.converged,
        format_real(report.rho_observed)
    );
    let _ = writeln!(
        summary,
        "solution min={} max={}",
        format_real(lo),
        format_real(hi)
    );
    let code = if report.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    };
    Ok(Outcome { summary, code })
}

/// Contraction certificate for a problem in the h1 norm.
pub fn certify(problem: &QVIProblem, trials: usize, seed: u64) -> Result<ContractionCertificate> {
    let constants = estimate_constants(&problem.operator, NormTag::H1, trials, seed)?;
    Ok(contraction_certificate(
        &constants,
        problem.obstacle.lipschitz_bound(NormTag::H1),
    ))
}

fn cmd_certify(cfg: &ExperimentConfig) -> Result<Outcome> {
    let problem = cfg.problem.build()?;
    let cert = certify(&problem, cfg.study.trials, cfg.seed)?;
    write(
        &cfg.out,
        "certificate.csv",
        &format!(
            "{}\n{}\n",
            ContractionCertificate::CSV_HEADER,
            cert.csv_row()
        ),
    )?;
    let summary = format!(
        "rho={} smallness_ok={}\n",
        format_real(cert.rho),
        cert.smallness_ok
    );
    let code = if cert.smallness_ok {
        EXIT_OK
    } else {
        EXIT_VERDICT
    };
    Ok(Outcome { summary, code })
}

fn study_options(cfg: &ExperimentConfig, jobs: usize) -> StudyOptions {
    let solver = &cfg.solver;
    StudyOptions {
        outer: solver.outer(),
        inner: VIParams {
            tol: solver.tol_inner,
            max_iter: solver.max_inner,
            omega: solver.omega.unwrap_or(1.0),
            tau: solver.tau,
        },
        auto_omega: solver.omega.is_none(),
        jobs,
        seed: cfg.seed,
        trials: cfg.study.trials,
    }
}

fn cmd_study(command: &Command, cfg: &ExperimentConfig, jobs: usize) -> Result<Outcome> {
    let opts = study_options(cfg, jobs);
    let study = &cfg.study;
    let (file, result): (&str, StudyResult) = match command {
        Command::Regpath => {
            let problem = cfg.problem.build()?;
            let exact = exact_solution(&cfg.problem);
            let reference = match (study.reference, exact) {
                (Some(ReferenceKind::Exact), None) => {
                    return Err(Error::Config {
                        line: 0,
                        key: "reference".into(),
                        message: format!("no exact solution known for {}", cfg.problem.name),
                    })
                }
                (Some(ReferenceKind::Exact) | None, Some(y)) => Reference::Exact(y),
                _ => Reference::SolveAt(study.reference_eps),
            };
            let r = run_regularization_path(&problem, &study.eps_list, &reference, &opts)?;
            ("regpath.csv", r)
        }
        Command::Perturb => {
            let problem = cfg.problem.build()?;
            let r = run_operator_perturbation(&problem, study.family, &study.delta_list, &opts)?;
            ("perturb.csv", r)
        }
        Command::Refine => {
            let template = |n: usize| cfg.problem.clone().with_n(n).build();
            (
                "refine.csv",
                run_mesh_refinement(&template, &study.n_list, &opts)?,
            )
        }
        Command::Robust => {
            let mut problem = cfg.problem.build()?;
            if study.eps > 0.0 {
                let op: Operator =
                    crate::operators::add_regularization(&problem.operator, study.eps, 0.0, None)?;
                problem = problem.with_operator(op)?;
            }
            let r = run_data_robustness(&problem, &study.f_deltas, &study.phi_deltas, &opts)?;
            ("robust.csv", r)
        }
        _ => unreachable!("not a study subcommand"),
    };
    write(&cfg.out, file, &result.to_csv())?;
    let mut summary = format!("study={} rows={}", result.name, result.rows.len());
    match &result.fit {
        Some(fit) => {
            let _ = write!(
                summary,
                " slope={} r2={}",
                format_real(fit.slope),
                format_real(fit.r2)
            );
        }
        None => summary.push_str(" slope=none"),
    }
    let _ = write!(summary, " exact_hits={}", result.exact_hits);
    for (name, v) in &result.verdicts {
        let _ = write!(summary, " {name}={v}");
    }
    summary.push('\n');
    let code = if result.all_verdicts_pass() {
        EXIT_OK
    } else {
        EXIT_VERDICT
    };
    Ok(Outcome { summary, code })
}

/// Random symmetric, strictly diagonally dominant tridiagonal obstacle
/// problem with `ndof` unknowns: off-diagonals in `[−1, 1]`, forces in
/// `[−1, 1]`, obstacles in `[0, 1]`.
pub fn random_obstacle_instance(
    ndof: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(LinearEllipticOperator, GridFunction, GridFunction)> {
    let mesh = Mesh::new(ndof + 1, BoundaryCondition::Dirichlet)?;
    let off: Vec<f64> = (0..ndof.saturating_sub(1))
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let mut lower = vec![0.0; ndof];
    let mut upper = vec![0.0; ndof];
    for (i, o) in off.iter().enumerate() {
        upper[i] = *o;
        lower[i + 1] = *o;
    }
    let diag: Vec<f64> = (0..ndof)
        .map(|i| lower[i].abs() + upper[i].abs() + rng.gen_range(0.1..2.0))
        .collect();
    let op = LinearEllipticOperator::from_bands(mesh, lower, diag, upper)?;
    let f = GridFunction::new(mesh, (0..ndof).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let psi = GridFunction::new(mesh, (0..ndof).map(|_| rng.gen_range(0.0..1.0)).collect())?;
    Ok((op, f, psi))
}

/// Row of the oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleComparison {
    pub deviation: f64,
    pub kkt_residual: f64,
    pub accepted_sets: usize,
    pub report: VISolveReport,
}

/// Solves `trials` random instances with PSOR (`params`) and by active-set
/// enumeration.
pub fn oracle_comparisons(
    trials: usize,
    ndof: usize,
    seed: u64,
    params: &VIParams,
) -> Result<Vec<OracleComparison>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            let (op, f, psi) = random_obstacle_instance(ndof, &mut rng)?;
            let report = solve_vi_psor(&op, &f, &psi, params)?;
            let oracle = solve_vi_active_set_oracle(&op, &f, &psi)?;
            let as_op: Operator = op.into();
            Ok(OracleComparison {
                deviation: report.solution.distance(&oracle.solution, NormKind::Sup)?,
                kkt_residual: kkt_residual(&as_op, &f, &psi, &report.solution)?,
                accepted_sets: oracle.accepted_sets,
                report,
            })
        })
        .collect()
}

fn cmd_oracle(cfg: &ExperimentConfig, trials: usize, ndof: usize) -> Result<Outcome> {
    const MAX_DEVIATION: f64 = 1e-8;
    const MAX_KKT: f64 = 1e-9;
    if trials == 0 || ndof == 0 {
        return Err(Error::Config {
            line: 0,
            key: if trials == 0 { "trials" } else { "ndof" }.into(),
            message: "must be ≥ 1".into(),
        });
    }
    if ndof > 20 {
        return Err(Error::Config {
            line: 0,
            key: "ndof".into(),
            message: format!("the oracle handles at most 20 unknowns, got {ndof}"),
        });
    }
    let params = VIParams {
        tol: cfg.solver.tol_inner,
        max_iter: cfg.solver.max_inner,
        omega: cfg.solver.omega.unwrap_or(1.0),
        tau: cfg.solver.tau,
    };
    let rows = oracle_comparisons(trials, ndof, cfg.seed, &params)?;
    let mut csv = String::from("trial,deviation,kkt_residual,accepted_sets,iterations\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            i,
            format_real(r.deviation),
            format_real(r.kkt_residual),
            r.accepted_sets,
            r.report.iterations
        );
    }
    write(&cfg.out, "oracle_check.csv", &csv)?;
    let max_dev = rows.iter().map(|r| r.deviation).fold(0.0, f64::max);
    let max_kkt = rows.iter().map(|r| r.kkt_residual).fold(0.0, f64::max);
    let all_converged = rows.iter().all(|r| r.report.converged);
    let summary = format!(
        "trials={trials} ndof={ndof} max_deviation={} max_kkt_residual={}\n",
        format_real(max_dev),
        format_real(max_kkt)
    );
    let code = if !all_converged {
        EXIT_NOT_CONVERGED
    } else if max_dev <= MAX_DEVIATION && max_kkt <= MAX_KKT {
        EXIT_OK
    } else {
        EXIT_VERDICT
    };
    Ok(Outcome { summary, code })
}
