//! P1 finite elements for the Laplace-transformed one-asset equation
//!
//! `(z + r) u - (1/2) sigma^2 x^2 u'' - r x u' = u0` on `(0, L)`.
//!
//! The weak form is `z (u, v) + B(u, v)` with
//! `B(u, v) = (1/2) sigma^2 (x^2 u', v') + (sigma^2 - r)(x u', v) + r (u, v)`.
//! Element integrals are polynomial and are evaluated in closed form.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analytic::payoff_put;
use crate::error::{Error, Result};
use crate::linalg::Tridiagonal;
use crate::parallel::NodeSolver;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Market1D {
    pub r: f64,
    pub sigma: f64,
    pub strike: f64,
    pub maturity: f64,
    /// Truncation point `L` of the asset axis.
    pub truncation: f64,
}

impl Market1D {
    pub fn new(r: f64, sigma: f64, strike: f64, maturity: f64, truncation: f64) -> Self {
        Self {
            r,
            sigma,
            strike,
            maturity,
            truncation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.strike > 0.0 && self.maturity > 0.0) {
            return Err(Error::Domain(format!(
                "sigma, strike and maturity must be positive: {self:?}"
            )));
        }
        if !(self.truncation >= self.strike) {
            return Err(Error::Domain(format!(
                "truncation {} must not cut into the payoff support [0, {}]",
                self.truncation, self.strike
            )));
        }
        Ok(())
    }
}

/// Uniform mesh `x_i = i L / M`, `i = 0..=M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mesh1D {
    pub length: f64,
    pub elements: usize,
}

impl Mesh1D {
    pub fn uniform(length: f64, elements: usize) -> Self {
        assert!(elements >= 1 && length > 0.0, "empty mesh");
        Self { length, elements }
    }

    pub fn h(&self) -> f64 {
        self.length / self.elements as f64
    }

    pub fn node_count(&self) -> usize {
        self.elements + 1
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.elements {
            self.length
        } else {
            i as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.node_count()).map(|i| self.x(i)).collect()
    }
}

/// Prescribed boundary value, known both in time and in the Laplace domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DirichletValue {
    Zero,
    /// `K e^{-r t}`, transformed to `K / (z + r)`.
    DiscountedStrike { strike: f64, rate: f64 },
}

impl DirichletValue {
    pub fn at_time(&self, t: f64) -> f64 {
        match *self {
            DirichletValue::Zero => 0.0,
            DirichletValue::DiscountedStrike { strike, rate } => strike * (-rate * t).exp(),
        }
    }

    pub fn transform(&self, z: Complex64) -> Result<Complex64> {
        match *self {
            DirichletValue::Zero => Ok(Complex64::new(0.0, 0.0)),
            DirichletValue::DiscountedStrike { strike, rate } => {
                left_dirichlet_transform(z, strike, rate)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RightCondition {
    Dirichlet(DirichletValue),
    TransparentRobin,
}

/// The node `x = 0` is always a Dirichlet node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub left: DirichletValue,
    pub right: RightCondition,
}

impl BoundarySpec {
    /// `u(0) = K e^{-rt}`, `u(L) = 0`.
    pub fn put_dirichlet(market: &Market1D) -> Self {
        Self {
            left: DirichletValue::DiscountedStrike {
                strike: market.strike,
                rate: market.r,
            },
            right: RightCondition::Dirichlet(DirichletValue::Zero),
        }
    }

    /// `u(0) = K e^{-rt}` with the exact exterior Robin relation at `L`.
    pub fn put_transparent(market: &Market1D) -> Self {
        Self {
            right: RightCondition::TransparentRobin,
            ..Self::put_dirichlet(market)
        }
    }

    pub fn all_zero() -> Self {
        Self {
            left: DirichletValue::Zero,
            right: RightCondition::Dirichlet(DirichletValue::Zero),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Payoff1D {
    Put { strike: f64 },
    Zero,
}

impl Payoff1D {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Payoff1D::Put { strike } => payoff_put(x, strike),
            Payoff1D::Zero => 0.0,
        }
    }

    /// Exact `(u0, phi_i)` for every hat function; the put integrand is split at the strike.
    pub fn load_vector(&self, mesh: &Mesh1D) -> Vec<f64> {
        let mut load = vec![0.0; mesh.node_count()];
        let Payoff1D::Put { strike } = *self else {
            return load;
        };
        let h = mesh.h();
        for e in 0..mesh.elements {
            let (a, b) = (mesh.x(e), mesh.x(e + 1));
            if a >= strike {
                continue;
            }
            let hi = b.min(strike);
            // quadratic integrands: Simpson is exact
            let simpson = |f: &dyn Fn(f64) -> f64| {
                (hi - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + hi)) + f(hi))
            };
            load[e] += simpson(&|x| (strike - x) * (b - x) / h);
            load[e + 1] += simpson(&|x| (strike - x) * (x - a) / h);
        }
        load
    }
}

/// `K / (z + r)`, the transform of `K e^{-rt}`.
pub fn left_dirichlet_transform(z: Complex64, strike: f64, r: f64) -> Result<Complex64> {
    let denom = z + r;
    if denom.norm() == 0.0 {
        return Err(Error::SingularInput(format!("z = {z} coincides with -r")));
    }
    Ok(strike / denom)
}

/// Logarithmic derivative `c(z)` of the decaying exterior solution at `x = L`,
/// so that `u'(L) = c(z) u(L)`.
pub fn robin_coefficient(z: Complex64, r: f64, sigma: f64, length: f64) -> Result<Complex64> {
    let s2 = sigma * sigma;
    let drift = r - 0.5 * s2;
    let radicand = drift * drift + 2.0 * s2 * (r + z);
    if radicand.norm() == 0.0 {
        return Err(Error::DegenerateInput(format!(
            "Robin radicand vanishes at z = {z}"
        )));
    }
    Ok((-drift - radicand.sqrt()) / (length * s2))
}

/// Real mass and spatial matrices over all nodes, boundaries not yet applied.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialOperator1D {
    pub mesh: Mesh1D,
    pub market: Market1D,
    pub mass: Tridiagonal<f64>,
    /// Matrix of `B(phi_j, phi_i)` at row `i`, column `j`.
    pub stiffness: Tridiagonal<f64>,
}

impl SpatialOperator1D {
    pub fn new(mesh: Mesh1D, market: Market1D) -> Self {
        let n = mesh.node_count();
        let h = mesh.h();
        let half_s2 = 0.5 * market.sigma * market.sigma;
        let conv = market.sigma * market.sigma - market.r;
        let mut mass = Tridiagonal::zeros(n);
        let mut stiff = Tridiagonal::zeros(n);
        for e in 0..mesh.elements {
            let (a, b) = (mesh.x(e), mesh.x(e + 1));
            // int x^2 over the element, times phi' phi' = +-1/h^2
            let diff = half_s2 * (b * b * b - a * a * a) / (3.0 * h * h);
            // int x phi_a and int x phi_b
            let xa = h * (2.0 * a + b) / 6.0;
            let xb = h * (a + 2.0 * b) / 6.0;
            let m_diag = h / 3.0;
            let m_off = h / 6.0;
            // local[test][trial]; trial derivative -1/h (a) or 1/h (b)
            let local = [
                [
                    diff - conv * xa / h + market.r * m_diag,
                    -diff + conv * xa / h + market.r * m_off,
                ],
                [
                    -diff - conv * xb / h + market.r * m_off,
                    diff + conv * xb / h + market.r * m_diag,
                ],
            ];
            stiff.diag[e] += local[0][0];
            stiff.upper[e] += local[0][1];
            stiff.lower[e] += local[1][0];
            stiff.diag[e + 1] += local[1][1];
            mass.diag[e] += m_diag;
            mass.diag[e + 1] += m_diag;
            mass.upper[e] += m_off;
            mass.lower[e] += m_off;
        }
        Self {
            mesh,
            market,
            mass,
            stiffness: stiff,
        }
    }

    /// `z M + K` over all nodes as a complex matrix.
    pub fn shifted(&self, z: Complex64) -> Tridiagonal<Complex64> {
        let combine = |m: &[f64], k: &[f64]| -> Vec<Complex64> {
            m.iter().zip(k).map(|(&m, &k)| z * m + k).collect()
        };
        Tridiagonal {
            lower: combine(&self.mass.lower, &self.stiffness.lower),
            diag: combine(&self.mass.diag, &self.stiffness.diag),
            upper: combine(&self.mass.upper, &self.stiffness.upper),
        }
    }

    /// Diagonal term contributed at `x = L` by the transparent condition:
    /// `-(1/2) sigma^2 L^2 c(z)`.
    pub fn robin_term(&self, z: Complex64) -> Result<Complex64> {
        let m = &self.market;
        let c = robin_coefficient(z, m.r, m.sigma, self.mesh.length)?;
        Ok(-0.5 * m.sigma * m.sigma * self.mesh.length * self.mesh.length * c)
    }
}

/// Boundary-reduced tridiagonal system for the free nodes `first_free..=last_free`.
#[derive(Debug, Clone)]
pub struct LinearSystem1D {
    pub matrix: Tridiagonal<Complex64>,
    pub rhs: Vec<Complex64>,
    pub first_free: usize,
    pub node_count: usize,
    pub left_value: Complex64,
    pub right_value: Option<Complex64>,
}

/// Nodal values of one transformed solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub values: Vec<Complex64>,
}

impl ComplexField {
    pub fn conj(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }
}

/// Assembles the Galerkin system at `z` with Dirichlet rows eliminated.
pub fn assemble(
    op: &SpatialOperator1D,
    z: Complex64,
    bc: &BoundarySpec,
    load: &[f64],
) -> Result<LinearSystem1D> {
    let n = op.mesh.node_count();
    assert_eq!(load.len(), n, "load vector length mismatch");
    let mut full = op.shifted(z);
    let mut rhs: Vec<Complex64> = load.iter().map(|&b| Complex64::new(b, 0.0)).collect();
    let left_value = bc.left.transform(z)?;
    let right_value = match bc.right {
        RightCondition::Dirichlet(v) => Some(v.transform(z)?),
        RightCondition::TransparentRobin => {
            full.diag[n - 1] += op.robin_term(z)?;
            None
        }
    };
    let first = 1;
    let last = if right_value.is_some() { n - 2 } else { n - 1 };
    if first > last {
        return Ok(LinearSystem1D {
            matrix: Tridiagonal::zeros(0),
            rhs: Vec::new(),
            first_free: first,
            node_count: n,
            left_value,
            right_value,
        });
    }
    rhs[first] -= full.lower[0] * left_value;
    if let Some(g) = right_value {
        rhs[last] -= full.upper[last] * g;
    }
    let matrix = Tridiagonal {
        lower: full.lower[first..last].to_vec(),
        diag: full.diag[first..=last].to_vec(),
        upper: full.upper[first..last].to_vec(),
    };
    Ok(LinearSystem1D {
        matrix,
        rhs: rhs[first..=last].to_vec(),
        first_free: first,
        node_count: n,
        left_value,
        right_value,
    })
}

/// Solves the reduced system and reinserts the boundary values.
pub fn solve(system: &LinearSystem1D) -> Result<ComplexField> {
    let free = system.matrix.solve(&system.rhs)?;
    let mut values = Vec::with_capacity(system.node_count);
    values.push(system.left_value);
    values.extend(free);
    if let Some(g) = system.right_value {
        values.push(g);
    }
    debug_assert_eq!(values.len(), system.node_count);
    Ok(ComplexField { values })
}

/// One-asset pricing problem at a fixed mesh, ready to be solved at any `z`.
#[derive(Debug, Clone)]
pub struct PutProblem1D {
    pub operator: SpatialOperator1D,
    pub bc: BoundarySpec,
    pub load: Vec<f64>,
}

impl PutProblem1D {
    pub fn new(market: Market1D, elements: usize, bc: BoundarySpec, payoff: Payoff1D) -> Self {
        let mesh = Mesh1D::uniform(market.truncation, elements);
        Self {
            operator: SpatialOperator1D::new(mesh, market),
            bc,
            load: payoff.load_vector(&mesh),
        }
    }

    pub fn mesh(&self) -> &Mesh1D {
        &self.operator.mesh
    }

    pub fn solve_at(&self, z: Complex64) -> Result<ComplexField> {
        solve(&assemble(&self.operator, z, &self.bc, &self.load)?)
    }
}

impl NodeSolver for PutProblem1D {
    fn solve_node(&self, z: Complex64) -> Result<Vec<Complex64>> {
        Ok(self.solve_at(z)?.values)
    }
}

/// `|v|_V^2 = int x^2 |v'|^2` for a P1 field, exact per element.
pub fn weighted_seminorm_sq(mesh: &Mesh1D, v: &[Complex64]) -> f64 {
    let h = mesh.h();
    (0..mesh.elements)
        .map(|e| {
            let (a, b) = (mesh.x(e), mesh.x(e + 1));
            let slope = (v[e + 1] - v[e]) / h;
            slope.norm_sqr() * (b * b * b - a * a * a) / 3.0
        })
        .sum()
}

/// `||v||^2` over `(0, L)` for a P1 field, exact per element.
pub fn l2_norm_sq(mesh: &Mesh1D, v: &[Complex64]) -> f64 {
    let h = mesh.h();
    (0..mesh.elements)
        .map(|e| {
            let (p, q) = (v[e], v[e + 1]);
            h / 3.0 * (p.norm_sqr() + (p * q.conj()).re + q.norm_sqr())
        })
        .sum()
}

/// `B(u, v)` for P1 fields through the assembled spatial matrix.
pub fn bilinear_b(op: &SpatialOperator1D, u: &[Complex64], v: &[Complex64]) -> Complex64 {
    let k = &op.stiffness;
    let n = k.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let mut row = k.diag[i] * u[i];
        if i > 0 {
            row += k.lower[i - 1] * u[i - 1];
        }
        if i + 1 < n {
            row += k.upper[i] * u[i + 1];
        }
        acc += row * v[i].conj();
    }
    acc
}
