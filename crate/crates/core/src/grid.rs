//! Uniform meshes on (0,1), nodal grid functions, discrete norms and the
//! lattice operations used by the order-theoretic solvers.
//!
//! Dirichlet grid functions carry interior values only; the boundary zeros
//! are implicit in every norm, integral and CSV row. Neumann grid functions
//! carry every node and use trapezoid end-weights of 1/2.

use std::fmt;

use crate::error::{Error, Result};
use crate::tridiag;

/// Boundary condition tag of a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

impl fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Dirichlet => f.write_str("dirichlet"),
            Self::Neumann => f.write_str("neumann"),
        }
    }
}

impl std::str::FromStr for BoundaryCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirichlet" => Ok(Self::Dirichlet),
            "neumann" => Ok(Self::Neumann),
            other => Err(Error::Parse(format!(
                "unknown boundary condition `{other}`"
            ))),
        }
    }
}

/// Norms available on grid functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    H1,
    Sup,
}

/// Norm in which structural operator constants are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormTag {
    L2,
    H1,
}

impl NormTag {
    pub fn kind(self) -> NormKind {
        match self {
            Self::L2 => NormKind::L2,
            Self::H1 => NormKind::H1,
        }
    }
}

impl fmt::Display for NormTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::L2 => f.write_str("l2"),
            Self::H1 => f.write_str("h1"),
        }
    }
}

/// Uniform mesh of `n` cells on (0,1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mesh {
    n: usize,
    h: f64,
    bc: BoundaryCondition,
}

impl Mesh {
    pub fn new(n: usize, bc: BoundaryCondition) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2 cells, got {n}"
            )));
        }
        Ok(Self {
            n,
            h: 1.0 / n as f64,
            bc,
        })
    }

    pub fn cells(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn boundary(&self) -> BoundaryCondition {
        self.bc
    }

    /// Number of degrees of freedom: interior nodes for Dirichlet, all nodes
    /// for Neumann.
    pub fn dofs(&self) -> usize {
        match self.bc {
            BoundaryCondition::Dirichlet => self.n - 1,
            BoundaryCondition::Neumann => self.n + 1,
        }
    }

    /// Coordinate of degree of freedom `i`.
    pub fn x(&self, i: usize) -> f64 {
        match self.bc {
            BoundaryCondition::Dirichlet => (i + 1) as f64 * self.h,
            BoundaryCondition::Neumann => i as f64 * self.h,
        }
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.dofs()).map(|i| self.x(i)).collect()
    }

    /// Trapezoid weight of dof `i` (1/2 at Neumann end nodes, 1 otherwise).
    pub fn weight(&self, i: usize) -> f64 {
        match self.bc {
            BoundaryCondition::Neumann if i == 0 || i == self.n => 0.5,
            _ => 1.0,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.dofs()).map(|i| self.weight(i)).collect()
    }

    /// Bands of the Gram matrix `G` with `‖v‖²_h1 = vᵀ G v`.
    pub(crate) fn h1_gram(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.dofs();
        let h = self.h;
        let mut lower = vec![-1.0 / h; m];
        let mut upper = vec![-1.0 / h; m];
        let mut diag = vec![h + 2.0 / h; m];
        lower[0] = 0.0;
        upper[m - 1] = 0.0;
        if self.bc == BoundaryCondition::Neumann {
            diag[0] = 0.5 * h + 1.0 / h;
            diag[m - 1] = 0.5 * h + 1.0 / h;
        }
        (lower, diag, upper)
    }

    fn check_same(&self, other: &Mesh) -> Result<()> {
        if self != other {
            return Err(Error::IncompatibleGrid(format!(
                "mesh (n={}, {}) vs (n={}, {})",
                self.n, self.bc, other.n, other.bc
            )));
        }
        Ok(())
    }
}

/// Nodal values on a mesh, one per degree of freedom, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    mesh: Mesh,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(mesh: Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.dofs() {
            return Err(Error::IncompatibleGrid(format!(
                "{} values for a mesh with {} dofs",
                values.len(),
                mesh.dofs()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { mesh, values })
    }

    pub fn zeros(mesh: Mesh) -> Self {
        Self::constant(mesh, 0.0)
    }

    pub fn constant(mesh: Mesh, c: f64) -> Self {
        assert!(c.is_finite(), "constant grid function must be finite");
        Self {
            mesh,
            values: vec![c; mesh.dofs()],
        }
    }

    /// Samples `f` at the degrees of freedom.
    pub fn from_fn(mesh: Mesh, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(mesh, mesh.coordinates().into_iter().map(f).collect())
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Componentwise map. Panics if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        assert!(
            values.iter().all(|v| v.is_finite()),
            "map produced a non-finite value"
        );
        Self {
            mesh: self.mesh,
            values,
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.mesh.check_same(&other.mesh)?;
        Self::new(
            self.mesh,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, t: f64) -> Self {
        self.map(|v| t * v)
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.zip_with(other, |u, v| a * u + b * v)
    }

    pub fn shift(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    /// Trapezoid rule over (0,1); Dirichlet boundary values count as 0.
    pub fn integral(&self) -> f64 {
        let h = self.mesh.h;
        h * self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| self.mesh.weight(i) * v)
            .sum::<f64>()
    }

    /// Trapezoid-weighted pairing `h Σ w_i u_i v_i`.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.mesh.check_same(&other.mesh)?;
        Ok(self.pairing_unchecked(&other.values))
    }

    pub(crate) fn pairing_unchecked(&self, other: &[f64]) -> f64 {
        let h = self.mesh.h;
        h * self
            .values
            .iter()
            .zip(other)
            .enumerate()
            .map(|(i, (u, v))| self.mesh.weight(i) * u * v)
            .sum::<f64>()
    }

    fn gradient_energy(&self) -> f64 {
        let h = self.mesh.h;
        let v = &self.values;
        let mut s: f64 = v.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        if self.mesh.bc == BoundaryCondition::Dirichlet {
            s += v[0] * v[0] + v[v.len() - 1] * v[v.len() - 1];
        }
        s / h
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        match kind {
            NormKind::L2 => self.pairing_unchecked(&self.values).sqrt(),
            NormKind::H1 => (self.pairing_unchecked(&self.values) + self.gradient_energy()).sqrt(),
            NormKind::Sup => self.values.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
        }
    }

    /// Norm of `self` as a functional `v ↦ ⟨self, v⟩` on the space normed
    /// by `tag`.
    pub fn dual_norm(&self, tag: NormTag) -> f64 {
        match tag {
            NormTag::L2 => self.norm(NormKind::L2),
            NormTag::H1 => {
                let h = self.mesh.h;
                let b: Vec<f64> = self
                    .values
                    .iter()
                    .enumerate()
                    .map(|(i, g)| h * self.mesh.weight(i) * g)
                    .collect();
                let (lo, d, up) = self.mesh.h1_gram();
                let z = tridiag::solve(&lo, &d, &up, &b).expect("h1 Gram matrix is SPD");
                b.iter()
                    .zip(&z)
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    .max(0.0)
                    .sqrt()
            }
        }
    }

    pub fn pos_part(&self) -> Self {
        self.map(|v| v.max(0.0))
    }

    pub fn lattice_min(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, f64::min)
    }

    pub fn lattice_max(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, f64::max)
    }

    /// `self_i ≤ other_i + tol` for every dof.
    pub fn leq(&self, other: &Self, tol: f64) -> Result<bool> {
        self.mesh.check_same(&other.mesh)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .all(|(a, b)| *a <= *b + tol))
    }

    /// Largest amount by which `self` exceeds `other` (0 when `self ≤ other`).
    pub fn max_excess_over(&self, other: &Self) -> Result<f64> {
        self.mesh.check_same(&other.mesh)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| f64::max(m, a - b)))
    }

    pub fn distance(&self, other: &Self, kind: NormKind) -> Result<f64> {
        Ok(self.sub(other)?.norm(kind))
    }

    /// Values at every mesh node, boundary zeros included for Dirichlet.
    pub fn node_values(&self) -> Vec<f64> {
        match self.mesh.bc {
            BoundaryCondition::Neumann => self.values.clone(),
            BoundaryCondition::Dirichlet => {
                let mut out = Vec::with_capacity(self.mesh.n + 1);
                out.push(0.0);
                out.extend_from_slice(&self.values);
                out.push(0.0);
                out
            }
        }
    }

    /// Restriction to a coarser mesh whose nodes are a subset of this mesh's.
    pub fn inject(&self, coarse: &Mesh) -> Result<Self> {
        if coarse.bc != self.mesh.bc || self.mesh.n % coarse.n != 0 {
            return Err(Error::Nesting(format!(
                "cannot inject n={} ({}) into n={} ({})",
                self.mesh.n, self.mesh.bc, coarse.n, coarse.bc
            )));
        }
        let stride = self.mesh.n / coarse.n;
        let nodes = self.node_values();
        let coarse_nodes: Vec<f64> = (0..=coarse.n).map(|k| nodes[k * stride]).collect();
        let values = match coarse.bc {
            BoundaryCondition::Neumann => coarse_nodes,
            BoundaryCondition::Dirichlet => coarse_nodes[1..coarse.n].to_vec(),
        };
        Self::new(*coarse, values)
    }

    /// `x,value` CSV with a header line and one row per mesh node.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,value\n");
        for (k, v) in self.node_values().iter().enumerate() {
            out.push_str(&format_real(k as f64 * self.mesh.h));
            out.push(',');
            out.push_str(&format_real(*v));
            out.push('\n');
        }
        out
    }

    /// Parses the output of [`GridFunction::to_csv`]. The node count fixes
    /// the mesh; `bc` decides which rows are degrees of freedom.
    pub fn from_csv(text: &str, bc: BoundaryCondition) -> Result<Self> {
        let mut xs = Vec::new();
        let mut vals = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line == "x,value" {
                continue;
            }
            let (x, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `x,value`", lineno + 1)))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            xs.push(parse(x)?);
            vals.push(parse(v)?);
        }
        if xs.len() < 3 {
            return Err(Error::Parse(format!(
                "need at least 3 nodes, got {}",
                xs.len()
            )));
        }
        let mesh = Mesh::new(xs.len() - 1, bc)?;
        for (k, x) in xs.iter().enumerate() {
            if (x - k as f64 * mesh.h).abs() > 1e-12 {
                return Err(Error::Parse(format!(
                    "node {k} at x={x} is not on a uniform grid"
                )));
            }
        }
        let values = match bc {
            BoundaryCondition::Neumann => vals,
            BoundaryCondition::Dirichlet => vals[1..vals.len() - 1].to_vec(),
        };
        Self::new(mesh, values)
    }
}

/// Formats a real with 17 significant digits, enough to round-trip an f64.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}
