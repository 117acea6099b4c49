//! Crank-Nicolson time marching on the same P1 spaces as the transformed solvers.
//!
//! Initial values are the Galerkin projection of the payoff with the boundary
//! values of `t = 0` held fixed, which is the initial state implied by the
//! load vector of the transformed problems. Both schemes therefore discretise
//! the same semi-discrete system in time.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem1d::{BoundarySpec, RightCondition, SpatialOperator1D};
use crate::fem2d::{basket_load, Basket2D, BasketOperator2D, EdgeCondition, EdgeSpec, Mesh2D};
use crate::linalg::{bicgstab, CsrMatrix, Ilu0, IterativeOptions, Tridiagonal};

/// Uniform steps of the `theta = 1/2` scheme up to the maturity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarchConfig {
    pub steps: usize,
}

impl MarchConfig {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("at least one time step is required".into()));
        }
        Ok(Self { steps })
    }

    /// Step count for a step length that divides the maturity.
    pub fn from_step(maturity: f64, dt: f64) -> Result<Self> {
        let q = maturity / dt;
        let steps = q.round();
        if !(dt > 0.0) || (q - steps).abs() > 1e-9 * q.max(1.0) {
            return Err(Error::Config(format!(
                "step {dt} does not divide maturity {maturity}"
            )));
        }
        Self::new(steps as usize)
    }

    pub fn dt(&self, maturity: f64) -> f64 {
        maturity / self.steps as f64
    }
}

fn sub_tridiagonal(a: &Tridiagonal<f64>, first: usize, last: usize) -> Tridiagonal<f64> {
    Tridiagonal {
        lower: a.lower[first..last].to_vec(),
        diag: a.diag[first..=last].to_vec(),
        upper: a.upper[first..last].to_vec(),
    }
}

/// One-asset price at maturity on the nodes of `op.mesh`.
pub fn march1d(
    op: &SpatialOperator1D,
    bc: &BoundarySpec,
    load: &[f64],
    config: MarchConfig,
) -> Result<Vec<f64>> {
    let RightCondition::Dirichlet(right) = bc.right else {
        return Err(Error::Config(
            "time marching supports Dirichlet data at both ends only".into(),
        ));
    };
    let n = op.mesh.node_count();
    assert_eq!(load.len(), n, "load vector length mismatch");
    if n < 3 {
        return Ok(vec![bc.left.at_time(op.market.maturity), right.at_time(op.market.maturity)]);
    }
    let dt = config.dt(op.market.maturity);
    let (first, last) = (1, n - 2);
    let boundary = |t: f64| (bc.left.at_time(t), right.at_time(t));

    let mut u = vec![0.0; n];
    let (g0, g1) = boundary(0.0);
    u[0] = g0;
    u[n - 1] = g1;
    let m = &op.mass;
    let mut rhs = load[first..=last].to_vec();
    rhs[0] -= m.lower[0] * g0;
    rhs[last - first] -= m.upper[last] * g1;
    u[first..=last].copy_from_slice(&sub_tridiagonal(m, first, last).solve(&rhs)?);

    let combine = |s: f64| Tridiagonal {
        lower: m.lower.iter().zip(&op.stiffness.lower).map(|(a, b)| a + s * b).collect(),
        diag: m.diag.iter().zip(&op.stiffness.diag).map(|(a, b)| a + s * b).collect(),
        upper: m.upper.iter().zip(&op.stiffness.upper).map(|(a, b)| a + s * b).collect(),
    };
    let implicit = combine(0.5 * dt);
    let explicit = combine(-0.5 * dt);
    let reduced = sub_tridiagonal(&implicit, first, last);
    for step in 1..=config.steps {
        let (g0, g1) = boundary(step as f64 * dt);
        let mut rhs = explicit.mul_vec(&u)[first..=last].to_vec();
        rhs[0] -= implicit.lower[0] * g0;
        rhs[last - first] -= implicit.upper[last] * g1;
        let free = reduced.solve(&rhs)?;
        u[0] = g0;
        u[first..=last].copy_from_slice(&free);
        u[n - 1] = g1;
    }
    Ok(u)
}

/// Basket price at maturity on the nodes of `op.mesh`; Dirichlet edges carry zero.
pub fn march2d(
    op: &BasketOperator2D,
    edges: &EdgeSpec,
    load: &[f64],
    config: MarchConfig,
    opts: IterativeOptions,
) -> Result<Vec<f64>> {
    edges.validate()?;
    if edges.x1_max == EdgeCondition::TransparentRobin
        || edges.x2_max == EdgeCondition::TransparentRobin
    {
        return Err(Error::Config(
            "time marching supports Neumann and Dirichlet edges only".into(),
        ));
    }
    let n = op.mesh.node_count();
    assert_eq!(load.len(), n, "load vector length mismatch");
    let free = edges.free_nodes(&op.mesh);
    let dt = config.dt(op.basket.maturity);

    let mass = op.mass.submatrix(&free, &free);
    let b: Vec<f64> = free.iter().map(|&k| load[k]).collect();
    let (mut u, _) = bicgstab(&mass, &Ilu0::new(&mass)?, &b, None, opts)?;

    let stiff = op.stiffness.submatrix(&free, &free);
    let implicit = CsrMatrix::combine(&[(1.0, &mass), (0.5 * dt, &stiff)]);
    let explicit = CsrMatrix::combine(&[(1.0, &mass), (-0.5 * dt, &stiff)]);
    let ilu = Ilu0::new(&implicit)?;
    for _ in 0..config.steps {
        let rhs = explicit.mul_vec(&u);
        u = bicgstab(&implicit, &ilu, &rhs, Some(&u), opts)?.0;
    }
    let mut values = vec![0.0; n];
    for (&k, v) in free.iter().zip(u) {
        values[k] = v;
    }
    Ok(values)
}

/// Cached time-marched basket solution used as the error reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub basket: Basket2D,
    pub mesh: Mesh2D,
    pub steps: usize,
    pub values: Vec<f64>,
}

/// Recipe for a reference solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    /// Market with the extended truncation lengths.
    pub basket: Basket2D,
    pub cells: usize,
    pub dt: f64,
}

impl ReferenceSolution {
    pub fn build(spec: &ReferenceSpec) -> Result<Self> {
        spec.basket.validate()?;
        let config = MarchConfig::from_step(spec.basket.maturity, spec.dt)?;
        let mesh = Mesh2D::uniform(spec.basket.l1, spec.basket.l2, spec.cells, spec.cells);
        let op = BasketOperator2D::new(mesh, spec.basket);
        let load = basket_load(&mesh, spec.basket.strike);
        let opts = IterativeOptions {
            rel_tol: 1e-12,
            max_iter: 5000,
        };
        let values = march2d(&op, &EdgeSpec::basket_dirichlet(), &load, config, opts)?;
        Ok(Self {
            basket: spec.basket,
            mesh,
            steps: config.steps,
            values,
        })
    }

    pub fn satisfies(&self, spec: &ReferenceSpec) -> bool {
        let steps = MarchConfig::from_step(spec.basket.maturity, spec.dt).map(|c| c.steps);
        self.basket == spec.basket
            && self.mesh.m1 == spec.cells
            && self.mesh.m2 == spec.cells
            && steps.ok() == Some(self.steps)
            && self.values.len() == self.mesh.node_count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("json.partial");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Reads the cache at `path` if it matches `spec`, otherwise builds and stores it.
    pub fn load_or_build(path: &Path, spec: &ReferenceSpec, rebuild: bool) -> Result<Self> {
        if !rebuild && path.exists() {
            if let Ok(cached) = Self::load(path) {
                if cached.satisfies(spec) {
                    return Ok(cached);
                }
            }
        }
        let fresh = Self::build(spec)?;
        fresh.save(path)?;
        Ok(fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{bs_put, l2_error};
    use crate::fem1d::{Market1D, Mesh1D, Payoff1D};

    fn example1() -> Market1D {
        Market1D::new(0.05, 0.3, 50.0, 1.0, 200.0)
    }

    fn cn_error(m: usize) -> f64 {
        let market = example1();
        let mesh = Mesh1D::uniform(200.0, m);
        let op = SpatialOperator1D::new(mesh, market);
        let load = Payoff1D::Put { strike: 50.0 }.load_vector(&mesh);
        let u = march1d(&op, &BoundarySpec::put_dirichlet(&market), &load, MarchConfig::new(m).unwrap()).unwrap();
        l2_error(&u, |x| bs_put(x, 1.0, 50.0, 0.05, 0.3).unwrap(), 200.0)
    }

    #[test]
    fn config_checks() {
        assert!(MarchConfig::new(0).is_err());
        assert_eq!(MarchConfig::from_step(1.0, 0.02).unwrap().steps, 50);
        assert!(MarchConfig::from_step(1.0, 0.3).is_err());
        assert!((MarchConfig::new(640).unwrap().dt(1.0) - 1.0 / 640.0).abs() < 1e-18);
    }

    #[test]
    fn zero_data_stays_zero() {
        let market = example1();
        let op = SpatialOperator1D::new(Mesh1D::uniform(200.0, 20), market);
        let u = march1d(&op, &BoundarySpec::all_zero(), &vec![0.0; 21], MarchConfig::new(7).unwrap()).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));

        let basket = Basket2D {
            r: 0.05,
            a: [[0.09, -0.018], [-0.018, 0.09]],
            strike: 100.0,
            maturity: 1.0,
            l1: 300.0,
            l2: 300.0,
        };
        let op = BasketOperator2D::new(Mesh2D::uniform(300.0, 300.0, 6, 6), basket);
        let u = march2d(&op, &EdgeSpec::basket_dirichlet(), &vec![0.0; 49], MarchConfig::new(3).unwrap(), IterativeOptions::default()).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn robin_edges_rejected() {
        let market = example1();
        let op = SpatialOperator1D::new(Mesh1D::uniform(200.0, 4), market);
        let bc = BoundarySpec::put_transparent(&market);
        assert!(march1d(&op, &bc, &[0.0; 5], MarchConfig::new(1).unwrap()).is_err());
    }

    #[test]
    fn second_order_with_steps_tied_to_mesh() {
        let errs: Vec<f64> = [40, 80, 160].iter().map(|&m| cn_error(m)).collect();
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!((rate - 2.0).abs() < 0.01, "{errs:?}");
        }
    }

    #[test]
    fn stays_inside_payoff_envelope() {
        let market = example1();
        let mesh = Mesh1D::uniform(200.0, 80);
        let op = SpatialOperator1D::new(mesh, market);
        let load = Payoff1D::Put { strike: 50.0 }.load_vector(&mesh);
        let u = march1d(&op, &BoundarySpec::put_dirichlet(&market), &load, MarchConfig::new(10).unwrap()).unwrap();
        let bound = 50.0 * 1.05;
        assert!(u.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn reference_cache_round_trip() {
        let spec = ReferenceSpec {
            basket: Basket2D {
                r: 0.05,
                a: [[0.09, -0.018], [-0.018, 0.09]],
                strike: 100.0,
                maturity: 1.0,
                l1: 600.0,
                l2: 600.0,
            },
            cells: 16,
            dt: 0.25,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache").join("reference.json");
        let built = ReferenceSolution::load_or_build(&path, &spec, false).unwrap();
        assert!(built.satisfies(&spec));
        assert_eq!(ReferenceSolution::load(&path).unwrap(), built);
        let other = ReferenceSpec { dt: 0.5, ..spec };
        assert!(!built.satisfies(&other));
        let rebuilt = ReferenceSolution::load_or_build(&path, &other, false).unwrap();
        assert_eq!(rebuilt.steps, 2);
        let max = built.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 50.0 && max <= 105.0, "{max}");
    }
}
