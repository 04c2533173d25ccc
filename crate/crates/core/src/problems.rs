//! Named built-in QVI problems and their overridable parameters.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, GridFunction, Mesh};
use crate::obstacle::{KernelKind, ObstacleMap};
use crate::operators::{
    LinearEllipticOperator, NonMonotoneOperator, Nonlinearity, Operator, PLaplacianOperator,
};
use crate::qvi_solver::QVIProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemName {
    /// Neumann `−u'' + u = 1` with obstacle `1/2 + (1/4)∫y`; solution `2/3`.
    Example1d,
    /// Dirichlet p-Laplacian with a mean-value obstacle.
    PLaplacian,
    /// Dirichlet `−u'' + u` with a Gaussian kernel obstacle.
    KernelQvi,
    /// Neumann `−u'' + u + λ sin u` with the mean-value obstacle.
    NonmonotoneSine,
    /// Dirichlet `−u'' = 1` below the constant `0.05`.
    FixedObstacle,
}

impl ProblemName {
    pub const ALL: [ProblemName; 5] = [
        Self::Example1d,
        Self::PLaplacian,
        Self::KernelQvi,
        Self::NonmonotoneSine,
        Self::FixedObstacle,
    ];

    pub fn default_boundary(self) -> BoundaryCondition {
        match self {
            Self::Example1d | Self::NonmonotoneSine => BoundaryCondition::Neumann,
            _ => BoundaryCondition::Dirichlet,
        }
    }
}

impl fmt::Display for ProblemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Example1d => "example1d",
            Self::PLaplacian => "plaplacian",
            Self::KernelQvi => "kernel_qvi",
            Self::NonmonotoneSine => "nonmonotone_sine",
            Self::FixedObstacle => "fixed_obstacle",
        })
    }
}

impl FromStr for ProblemName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.to_string() == s.trim())
            .ok_or_else(|| Error::Parse(format!("unknown problem `{}`", s.trim())))
    }
}

/// Source of a force term.
#[derive(Debug, Clone, PartialEq)]
pub enum ForceSpec {
    Constant(f64),
    /// Grid-function CSV file.
    File(PathBuf),
}

impl FromStr for ForceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(Self::File(PathBuf::from(path.trim())));
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::Parse(format!("expected a number or file:<path>, got `{s}`")))?;
        if !v.is_finite() {
            return Err(Error::Parse(format!("force must be finite, got `{s}`")));
        }
        Ok(Self::Constant(v))
    }
}

impl ForceSpec {
    fn build(&self, mesh: Mesh) -> Result<GridFunction> {
        match self {
            Self::Constant(c) => Ok(GridFunction::constant(mesh, *c)),
            Self::File(path) => read_grid(path, mesh),
        }
    }
}

fn read_grid(path: &PathBuf, mesh: Mesh) -> Result<GridFunction> {
    let text = std::fs::read_to_string(path)?;
    let g = GridFunction::from_csv(&text, mesh.boundary())?;
    if g.mesh() != &mesh {
        return Err(Error::IncompatibleGrid(format!(
            "{} holds {} cells, problem uses {}",
            path.display(),
            g.mesh().cells(),
            mesh.cells()
        )));
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObstacleKind {
    ConstantMean,
    Kernel,
    Fixed,
}

impl FromStr for ObstacleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "constant_mean" => Ok(Self::ConstantMean),
            "kernel" => Ok(Self::Kernel),
            "fixed" => Ok(Self::Fixed),
            other => Err(Error::Parse(format!(
                "unknown obstacle kind `{other}` (expected constant_mean, kernel or fixed)"
            ))),
        }
    }
}

/// A built-in problem plus optional overrides. `None` fields keep the
/// problem's own value.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub name: ProblemName,
    pub n: usize,
    pub bc: Option<BoundaryCondition>,
    pub p: Option<f64>,
    pub eps_op: Option<f64>,
    pub lambda: Option<f64>,
    pub a0: Option<f64>,
    pub f: Option<ForceSpec>,
    pub upper_force: Option<ForceSpec>,
    pub obstacle_kind: Option<ObstacleKind>,
    pub c0: Option<f64>,
    pub alpha: Option<f64>,
    pub kernel: Option<KernelKind>,
    /// Constant base obstacle for kernel and fixed maps.
    pub psi: Option<f64>,
    pub psi_file: Option<PathBuf>,
}

impl ProblemSpec {
    pub fn new(name: ProblemName) -> Self {
        Self {
            name,
            n: 64,
            bc: None,
            p: None,
            eps_op: None,
            lambda: None,
            a0: None,
            f: None,
            upper_force: None,
            obstacle_kind: None,
            c0: None,
            alpha: None,
            kernel: None,
            psi: None,
            psi_file: None,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn build(&self) -> Result<QVIProblem> {
        use ProblemName::*;
        let name = self.name;
        let mesh = Mesh::new(self.n, self.bc.unwrap_or(name.default_boundary()))?;

        let operator: Operator = match name {
            PLaplacian => {
                PLaplacianOperator::new(mesh, self.p.unwrap_or(3.0), self.eps_op.unwrap_or(1e-3))?
                    .into()
            }
            _ => {
                let a0 = self
                    .a0
                    .unwrap_or(if name == FixedObstacle { 0.0 } else { 1.0 });
                let base = LinearEllipticOperator::assemble(mesh, |_| 1.0, |_| a0)?;
                if name == NonmonotoneSine {
                    let amplitude = self.lambda.unwrap_or(0.1);
                    NonMonotoneOperator::new(base, Nonlinearity::Sine { amplitude })?.into()
                } else {
                    base.into()
                }
            }
        };

        let default_f = if name == KernelQvi { 10.0 } else { 1.0 };
        let f = self
            .f
            .clone()
            .unwrap_or(ForceSpec::Constant(default_f))
            .build(mesh)?;
        let upper = match &self.upper_force {
            Some(spec) => spec.build(mesh)?,
            None => f.clone(),
        };

        let kind = self.obstacle_kind.unwrap_or(match name {
            KernelQvi => ObstacleKind::Kernel,
            FixedObstacle => ObstacleKind::Fixed,
            _ => ObstacleKind::ConstantMean,
        });
        let base_psi = |default: f64| -> Result<GridFunction> {
            match &self.psi_file {
                Some(path) => read_grid(path, mesh),
                None => Ok(GridFunction::constant(mesh, self.psi.unwrap_or(default))),
            }
        };
        let obstacle = match kind {
            ObstacleKind::ConstantMean => {
                let c0 = self
                    .c0
                    .unwrap_or(if name == PLaplacian { 0.1 } else { 0.5 });
                ObstacleMap::constant_mean(mesh, c0, self.alpha.unwrap_or(0.25))?
            }
            ObstacleKind::Kernel => ObstacleMap::kernel(
                base_psi(0.5)?,
                self.alpha.unwrap_or(0.5),
                self.kernel.unwrap_or(KernelKind::Gauss { sigma: 0.2 }),
            )?,
            ObstacleKind::Fixed => ObstacleMap::fixed(base_psi(0.05)?),
        };

        QVIProblem::new(operator, f, obstacle, Some(upper))
    }
}

/// Exact solution where one is known in closed form.
pub fn exact_solution(spec: &ProblemSpec) -> Option<GridFunction> {
    let untouched = ProblemSpec {
        n: spec.n,
        ..ProblemSpec::new(ProblemName::Example1d)
    };
    (spec == &untouched).then(|| {
        let mesh = Mesh::new(spec.n, BoundaryCondition::Neumann).expect("n validated");
        GridFunction::constant(mesh, 2.0 / 3.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for name in ProblemName::ALL {
            assert_eq!(name.to_string().parse::<ProblemName>().unwrap(), name);
        }
        assert!("heat".parse::<ProblemName>().is_err());
    }

    #[test]
    fn every_builtin_builds() {
        for name in ProblemName::ALL {
            let p = ProblemSpec::new(name).with_n(16).build().unwrap();
            assert_eq!(p.operator.mesh().cells(), 16);
            assert_eq!(p.operator.mesh().boundary(), name.default_boundary());
        }
    }

    #[test]
    fn overrides_apply() {
        let spec = ProblemSpec {
            alpha: Some(0.5),
            f: Some(ForceSpec::Constant(2.0)),
            ..ProblemSpec::new(ProblemName::Example1d).with_n(8)
        };
        let p = spec.build().unwrap();
        assert!(p.f.values().iter().all(|v| *v == 2.0));
        let y = GridFunction::constant(*p.operator.mesh(), 1.0);
        let psi = p.obstacle.eval(&y).unwrap();
        assert!((psi.values()[0] - 1.0).abs() < 1e-15);
        assert!(exact_solution(&spec).is_none());
        assert!(exact_solution(&ProblemSpec::new(ProblemName::Example1d)).is_some());
    }

    #[test]
    fn negative_coupling_rejected() {
        let spec = ProblemSpec {
            alpha: Some(-0.5),
            ..ProblemSpec::new(ProblemName::Example1d)
        };
        assert!(spec.build().is_err());
    }

    #[test]
    fn force_specs_parse() {
        assert_eq!(
            "1.5".parse::<ForceSpec>().unwrap(),
            ForceSpec::Constant(1.5)
        );
        assert_eq!(
            "file: f.csv".parse::<ForceSpec>().unwrap(),
            ForceSpec::File("f.csv".into())
        );
        assert!("one".parse::<ForceSpec>().is_err());
    }
}
