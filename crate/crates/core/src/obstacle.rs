//! Solution-dependent obstacles `Φ(y)`: the coupling that turns an obstacle
//! problem into a quasi-variational one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, GridFunction, Mesh, NormTag};

/// Named kernels `k(x, ξ)` for kernel obstacles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    /// `k ≡ 1`.
    One,
    /// `exp(-(x - ξ)² / (2σ²))`.
    Gauss { sigma: f64 },
}

impl KernelKind {
    pub fn eval(&self, x: f64, xi: f64) -> f64 {
        match *self {
            Self::One => 1.0,
            Self::Gauss { sigma } => (-(x - xi).powi(2) / (2.0 * sigma * sigma)).exp(),
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::One => f.write_str("one"),
            Self::Gauss { sigma } => write!(f, "gauss({sigma})"),
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "one" {
            return Ok(Self::One);
        }
        if let Some(arg) = s.strip_prefix("gauss(").and_then(|r| r.strip_suffix(')')) {
            let sigma: f64 = arg
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad gauss width `{arg}`")))?;
            if !(sigma > 0.0) || !sigma.is_finite() {
                return Err(Error::Parse(format!(
                    "gauss width must be positive, got {sigma}"
                )));
            }
            return Ok(Self::Gauss { sigma });
        }
        Err(Error::Parse(format!(
            "unknown kernel `{s}` (expected `one` or `gauss(sigma)`)"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Variant {
    ConstantMean {
        c0: f64,
        alpha: f64,
    },
    Kernel {
        psi: GridFunction,
        alpha: f64,
        samples: Vec<f64>,
    },
    Fixed {
        psi: GridFunction,
    },
}

/// Obstacle map `Φ` on a fixed mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleMap {
    mesh: Mesh,
    variant: Variant,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "obstacle coupling alpha must be >= 0, got {alpha}"
        )));
    }
    Ok(())
}

impl ObstacleMap {
    /// `Φ(y) = c0 + alpha ∫ y`.
    pub fn constant_mean(mesh: Mesh, c0: f64, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !c0.is_finite() {
            return Err(Error::InvalidParameter("c0 must be finite".into()));
        }
        Ok(Self {
            mesh,
            variant: Variant::ConstantMean { c0, alpha },
        })
    }

    /// `Φ(y)_i = ψ_i + alpha Σ_j w_j h k(x_i, x_j) y_j⁺`.
    pub fn kernel(psi: GridFunction, alpha: f64, kernel: KernelKind) -> Result<Self> {
        let mesh = *psi.mesh();
        let xs = mesh.coordinates();
        let samples = xs
            .iter()
            .flat_map(|&x| xs.iter().map(move |&xi| kernel.eval(x, xi)))
            .collect();
        Self::kernel_from_samples(psi, alpha, samples)
    }

    /// Kernel map from a row-major `dofs × dofs` sample matrix, which must be
    /// nonnegative.
    pub fn kernel_from_samples(psi: GridFunction, alpha: f64, samples: Vec<f64>) -> Result<Self> {
        if samples.iter().any(|k| !(*k >= 0.0)) {
            return Err(Error::InvalidParameter(
                "kernel samples must be nonnegative".into(),
            ));
        }
        Self::kernel_samples_unchecked(psi, alpha, samples)
    }

    /// Like [`ObstacleMap::kernel_from_samples`] without the sign check on
    /// the samples. Negative entries break order preservation; this exists
    /// so that [`ObstacleMap::check_order_preserving`] can be exercised.
    pub fn kernel_samples_unchecked(
        psi: GridFunction,
        alpha: f64,
        samples: Vec<f64>,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let m = psi.mesh().dofs();
        if samples.len() != m * m {
            return Err(Error::IncompatibleGrid(format!(
                "kernel needs {} samples, got {}",
                m * m,
                samples.len()
            )));
        }
        if samples.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidParameter(
                "kernel samples must be finite".into(),
            ));
        }
        Ok(Self {
            mesh: *psi.mesh(),
            variant: Variant::Kernel {
                psi,
                alpha,
                samples,
            },
        })
    }

    /// `Φ(y) = ψ` regardless of `y`.
    pub fn fixed(psi: GridFunction) -> Self {
        Self {
            mesh: *psi.mesh(),
            variant: Variant::Fixed { psi },
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self.variant, Variant::Fixed { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self.variant {
            Variant::ConstantMean { .. } => "constant_mean",
            Variant::Kernel { .. } => "kernel",
            Variant::Fixed { .. } => "fixed",
        }
    }

    /// Smallest value `Φ` takes on nonnegative inputs.
    pub fn base_level(&self) -> f64 {
        match &self.variant {
            Variant::ConstantMean { c0, .. } => *c0,
            Variant::Kernel { psi, .. } | Variant::Fixed { psi } => {
                psi.values().iter().cloned().fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// The same map with its base level (`c0` or `ψ`) raised by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        let variant = match &self.variant {
            Variant::ConstantMean { c0, alpha } => Variant::ConstantMean {
                c0: c0 + delta,
                alpha: *alpha,
            },
            Variant::Kernel {
                psi,
                alpha,
                samples,
            } => Variant::Kernel {
                psi: psi.shift(delta),
                alpha: *alpha,
                samples: samples.clone(),
            },
            Variant::Fixed { psi } => Variant::Fixed {
                psi: psi.shift(delta),
            },
        };
        Self {
            mesh: self.mesh,
            variant,
        }
    }

    pub fn eval(&self, y: &GridFunction) -> Result<GridFunction> {
        if y.mesh() != &self.mesh {
            return Err(Error::IncompatibleGrid(
                "obstacle map and iterate meshes differ".into(),
            ));
        }
        match &self.variant {
            Variant::ConstantMean { c0, alpha } => {
                Ok(GridFunction::constant(self.mesh, c0 + alpha * y.integral()))
            }
            Variant::Kernel {
                psi,
                alpha,
                samples,
            } => {
                let m = self.mesh.dofs();
                let h = self.mesh.spacing();
                let weighted: Vec<f64> = y
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(j, v)| self.mesh.weight(j) * h * v.max(0.0))
                    .collect();
                let values = (0..m)
                    .map(|i| {
                        let row = &samples[i * m..(i + 1) * m];
                        psi.values()[i]
                            + alpha * row.iter().zip(&weighted).map(|(k, w)| k * w).sum::<f64>()
                    })
                    .collect();
                GridFunction::new(self.mesh, values)
            }
            Variant::Fixed { psi } => Ok(psi.clone()),
        }
    }

    /// Bound `L_Φ` with `‖Φ(u) − Φ(v)‖ ≤ L_Φ ‖u − v‖` in the `tag` norm.
    ///
    /// Both variants factor through a linear map applied to `u − v` (or to
    /// `u⁺ − v⁺`, which is no larger in l2), so the Hilbert–Schmidt norm of
    /// that map from weighted l2 into the target norm is a valid bound.
    pub fn lipschitz_bound(&self, tag: NormTag) -> f64 {
        match &self.variant {
            Variant::Fixed { .. } => 0.0,
            Variant::ConstantMean { alpha, .. } => match tag {
                NormTag::L2 => *alpha,
                NormTag::H1 => alpha * GridFunction::constant(self.mesh, 1.0).norm(tag.kind()),
            },
            Variant::Kernel { alpha, samples, .. } => {
                let m = self.mesh.dofs();
                let h = self.mesh.spacing();
                let w = self.mesh.weights();
                let k = |i: usize, j: usize| samples[i * m + j];
                let mut hs = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        hs += w[i] * w[j] * h * h * k(i, j).powi(2);
                    }
                }
                if tag == NormTag::H1 {
                    for j in 0..m {
                        let mut col: Vec<f64> = (0..m).map(|i| k(i, j)).collect();
                        if self.mesh.boundary() == BoundaryCondition::Dirichlet {
                            col.insert(0, 0.0);
                            col.push(0.0);
                        }
                        let grad: f64 = col.windows(2).map(|p| (p[1] - p[0]).powi(2)).sum();
                        hs += w[j] * h * grad / h;
                    }
                }
                alpha * hs.sqrt()
            }
        }
    }

    /// Samples whether `y1 ≤ y2` implies `Φ(y1) ≤ Φ(y2)` (to 1e-12).
    ///
    /// Each trial raises a random `y1 ∈ [-1,1]` by dense nonnegative noise;
    /// afterwards every coordinate is bumped once from a random nonnegative
    /// point, which catches isolated negative kernel entries.
    pub fn check_order_preserving(&self, trials: usize, seed: u64) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.mesh.dofs();
        let ordered = |y1: &GridFunction, y2: &GridFunction| -> bool {
            let a = self.eval(y1).expect("same mesh");
            let b = self.eval(y2).expect("same mesh");
            a.leq(&b, 1e-12).expect("same mesh")
        };
        for _ in 0..trials {
            let y1: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y2: Vec<f64> = y1.iter().map(|v| v + rng.gen_range(0.0..1.0)).collect();
            let y1 = GridFunction::new(self.mesh, y1).expect("finite");
            let y2 = GridFunction::new(self.mesh, y2).expect("finite");
            if !ordered(&y1, &y2) {
                return false;
            }
        }
        let base: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y1 = GridFunction::new(self.mesh, base.clone()).expect("finite");
        for j in 0..m {
            let mut bumped = base.clone();
            bumped[j] += rng.gen_range(0.5..1.0);
            let y2 = GridFunction::new(self.mesh, bumped).expect("finite");
            if !ordered(&y1, &y2) {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::NormKind;

    fn neumann(n: usize) -> Mesh {
        Mesh::new(n, BoundaryCondition::Neumann).unwrap()
    }

    fn random(mesh: Mesh, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> GridFunction {
        GridFunction::new(
            mesh,
            (0..mesh.dofs()).map(|_| rng.gen_range(lo..hi)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_mean_example_values() {
        let m = neumann(16);
        let phi = ObstacleMap::constant_mean(m, 0.5, 0.25).unwrap();
        let at_zero = phi.eval(&GridFunction::zeros(m)).unwrap();
        assert!(at_zero.values().iter().all(|v| (v - 0.5).abs() < 1e-15));
        let at_fixed_point = phi.eval(&GridFunction::constant(m, 2.0 / 3.0)).unwrap();
        assert!(at_fixed_point
            .values()
            .iter()
            .all(|v| (v - 2.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn unit_kernel_agrees_with_constant_mean_on_nonnegative_inputs() {
        let m = neumann(12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = ObstacleMap::kernel(GridFunction::constant(m, 0.5), 0.25, KernelKind::One).unwrap();
        let c = ObstacleMap::constant_mean(m, 0.5, 0.25).unwrap();
        for _ in 0..10 {
            let y = random(m, &mut rng, 0.0, 2.0);
            let d = k
                .eval(&y)
                .unwrap()
                .distance(&c.eval(&y).unwrap(), NormKind::Sup)
                .unwrap();
            assert!(d < 1e-12);
        }
    }

    #[test]
    fn lipschitz_bound_examples() {
        let m = neumann(10);
        assert_eq!(
            ObstacleMap::constant_mean(m, 0.5, 0.25)
                .unwrap()
                .lipschitz_bound(NormTag::L2),
            0.25
        );
        assert_eq!(
            ObstacleMap::fixed(GridFunction::zeros(m)).lipschitz_bound(NormTag::L2),
            0.0
        );
        let k = ObstacleMap::kernel(GridFunction::zeros(m), 0.25, KernelKind::One).unwrap();
        assert!((k.lipschitz_bound(NormTag::L2) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn negative_alpha_rejected() {
        let m = neumann(4);
        assert!(ObstacleMap::constant_mean(m, 0.5, -0.5).is_err());
        assert!(ObstacleMap::kernel(GridFunction::zeros(m), -1.0, KernelKind::One).is_err());
        let mut samples = vec![1.0; 25];
        samples[3] = -1.0;
        assert!(ObstacleMap::kernel_from_samples(GridFunction::zeros(m), 1.0, samples).is_err());
    }

    #[test]
    fn order_preservation_detection() {
        let m = neumann(16);
        assert!(ObstacleMap::constant_mean(m, 0.5, 0.3)
            .unwrap()
            .check_order_preserving(100, 1));
        let psi = GridFunction::constant(m, 0.2);
        let gauss =
            ObstacleMap::kernel(psi.clone(), 0.7, KernelKind::Gauss { sigma: 0.2 }).unwrap();
        assert!(gauss.check_order_preserving(100, 1));

        let d = m.dofs();
        let mut samples = vec![1.0; d * d];
        samples[5 * d + 9] = -20.0;
        let broken = ObstacleMap::kernel_samples_unchecked(psi.clone(), 0.5, samples).unwrap();
        // explicit violating pair: raise only coordinate 9
        let y1 = GridFunction::zeros(m);
        let mut v = vec![0.0; d];
        v[9] = 1.0;
        let y2 = GridFunction::new(m, v).unwrap();
        assert!(!broken
            .eval(&y1)
            .unwrap()
            .leq(&broken.eval(&y2).unwrap(), 1e-12)
            .unwrap());
        assert!(!broken.check_order_preserving(100, 1));
    }

    #[test]
    fn empirical_lipschitz_ratio_below_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
            let m = Mesh::new(20, bc).unwrap();
            let psi = GridFunction::from_fn(m, |x| 0.1 + x).unwrap();
            let maps = [
                ObstacleMap::constant_mean(m, 0.5, 0.25).unwrap(),
                ObstacleMap::kernel(psi.clone(), 0.6, KernelKind::Gauss { sigma: 0.15 }).unwrap(),
                ObstacleMap::kernel(psi.clone(), 0.3, KernelKind::One).unwrap(),
                ObstacleMap::fixed(psi.clone()),
            ];
            for map in &maps {
                for tag in [NormTag::L2, NormTag::H1] {
                    let bound = map.lipschitz_bound(tag);
                    for _ in 0..100 {
                        let u = random(m, &mut rng, -1.0, 1.0);
                        let v = random(m, &mut rng, -1.0, 1.0);
                        let num = map
                            .eval(&u)
                            .unwrap()
                            .distance(&map.eval(&v).unwrap(), tag.kind())
                            .unwrap();
                        let den = u.distance(&v, tag.kind()).unwrap();
                        assert!(num / den <= bound + 1e-9, "{} {tag}", map.kind_name());
                    }
                }
            }
        }
    }

    #[test]
    fn nonnegative_inputs_stay_above_base_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = Mesh::new(16, BoundaryCondition::Dirichlet).unwrap();
        let psi = GridFunction::from_fn(m, |x| 0.3 + x * x).unwrap();
        let maps = [
            ObstacleMap::constant_mean(m, 0.5, 0.25).unwrap(),
            ObstacleMap::kernel(psi, 0.5, KernelKind::Gauss { sigma: 0.1 }).unwrap(),
        ];
        for map in &maps {
            for _ in 0..50 {
                let y = random(m, &mut rng, 0.0, 3.0);
                let out = map.eval(&y).unwrap();
                assert!(out.values().iter().all(|v| *v >= map.base_level() - 1e-12));
            }
        }
    }

    #[test]
    fn sup_output_controlled_by_l2_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = neumann(24);
        let maps = [
            ObstacleMap::constant_mean(m, 0.5, 0.25).unwrap(),
            ObstacleMap::kernel(GridFunction::zeros(m), 0.25, KernelKind::One).unwrap(),
            ObstacleMap::kernel(
                GridFunction::zeros(m),
                0.5,
                KernelKind::Gauss { sigma: 0.3 },
            )
            .unwrap(),
        ];
        for map in &maps {
            let l = map.lipschitz_bound(NormTag::L2);
            for _ in 0..100 {
                let u = random(m, &mut rng, -1.0, 1.0);
                let v = random(m, &mut rng, -1.0, 1.0);
                let out = map
                    .eval(&u)
                    .unwrap()
                    .distance(&map.eval(&v).unwrap(), NormKind::Sup)
                    .unwrap();
                assert!(out <= l * u.distance(&v, NormKind::L2).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn kernel_parsing() {
        assert_eq!("one".parse::<KernelKind>().unwrap(), KernelKind::One);
        assert_eq!(
            "gauss(0.2)".parse::<KernelKind>().unwrap(),
            KernelKind::Gauss { sigma: 0.2 }
        );
        assert!("gauss(-1)".parse::<KernelKind>().is_err());
        assert!("tophat".parse::<KernelKind>().is_err());
    }

    #[test]
    fn shifted_raises_base_level() {
        let m = neumann(8);
        let phi = ObstacleMap::constant_mean(m, 0.5, 0.25)
            .unwrap()
            .shifted(0.1);
        assert!((phi.base_level() - 0.6).abs() < 1e-15);
    }
}
