//! P1 elements for the Laplace-transformed two-asset basket equation on
//! `[0, L1] x [0, L2]`.
//!
//! Grid cells are split along the diagonal from `(i, j)` to `(i + 1, j + 1)`.
//! With `D_ij = a_ij x_i x_j / 2` and `b_j = (sum_i a_ij + a_jj) / 2 - r` the
//! spatial form is `(D grad u, grad v) + sum_j (b_j x_j d_j u, v) + r (u, v)`.
//! All element integrands are at most quadratic, so the edge-midpoint rule is
//! exact. Edges at `x1 = 0` and `x2 = 0` carry no flux term because the
//! diffusion degenerates there.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem1d::{robin_coefficient, ComplexField};
use crate::linalg::{bicgstab, norm2, BandedLu, CsrMatrix, Ilu0, IterativeOptions};
use crate::parallel::NodeSolver;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Basket2D {
    pub r: f64,
    pub a: [[f64; 2]; 2],
    pub strike: f64,
    pub maturity: f64,
    pub l1: f64,
    pub l2: f64,
}

impl Basket2D {
    pub fn validate(&self) -> Result<()> {
        let a = self.a;
        if a[0][1] != a[1][0] {
            return Err(Error::Domain(format!("covariance matrix is not symmetric: {a:?}")));
        }
        if !(a[0][0] > 0.0 && a[1][1] > 0.0 && a[0][0] * a[1][1] - a[0][1] * a[1][0] > 0.0) {
            return Err(Error::Domain(format!(
                "covariance matrix is not positive definite: {a:?}"
            )));
        }
        if !(self.strike > 0.0 && self.maturity > 0.0 && self.l1 > 0.0 && self.l2 > 0.0) {
            return Err(Error::Domain(format!(
                "strike, maturity and truncation lengths must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// First-order coefficients `b_j` left after integrating by parts.
    pub fn convection(&self) -> [f64; 2] {
        let a = self.a;
        [
            0.5 * (a[0][0] + a[1][0] + a[0][0]) - self.r,
            0.5 * (a[0][1] + a[1][1] + a[1][1]) - self.r,
        ]
    }

    /// Same market with other truncation lengths.
    pub fn truncated(&self, l1: f64, l2: f64) -> Self {
        Self { l1, l2, ..*self }
    }
}

/// Uniform `(m1 + 1) x (m2 + 1)` grid; node `(i, j)` has index `j (m1 + 1) + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh2D {
    pub l1: f64,
    pub l2: f64,
    pub m1: usize,
    pub m2: usize,
}

impl Mesh2D {
    pub fn uniform(l1: f64, l2: f64, m1: usize, m2: usize) -> Self {
        assert!(m1 >= 1 && m2 >= 1 && l1 > 0.0 && l2 > 0.0, "empty mesh");
        Self { l1, l2, m1, m2 }
    }

    pub fn h1(&self) -> f64 {
        self.l1 / self.m1 as f64
    }

    pub fn h2(&self) -> f64 {
        self.l2 / self.m2 as f64
    }

    pub fn node_count(&self) -> usize {
        (self.m1 + 1) * (self.m2 + 1)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * (self.m1 + 1) + i
    }

    pub fn coords(&self, k: usize) -> [f64; 2] {
        let (i, j) = (k % (self.m1 + 1), k / (self.m1 + 1));
        [self.x1(i), self.x2(j)]
    }

    pub fn x1(&self, i: usize) -> f64 {
        if i == self.m1 {
            self.l1
        } else {
            i as f64 * self.h1()
        }
    }

    pub fn x2(&self, j: usize) -> f64 {
        if j == self.m2 {
            self.l2
        } else {
            j as f64 * self.h2()
        }
    }

    /// Counter-clockwise vertex triples, two per cell.
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        let mut tris = Vec::with_capacity(2 * self.m1 * self.m2);
        for j in 0..self.m2 {
            for i in 0..self.m1 {
                let p00 = self.index(i, j);
                let p10 = self.index(i + 1, j);
                let p01 = self.index(i, j + 1);
                let p11 = self.index(i + 1, j + 1);
                tris.push([p00, p10, p11]);
                tris.push([p00, p11, p01]);
            }
        }
        tris
    }

    /// Value of the P1 interpolant of nodal `values` at `(x1, x2)`.
    pub fn interpolate(&self, values: &[f64], x1: f64, x2: f64) -> f64 {
        let u = x1 / self.h1();
        let v = x2 / self.h2();
        let i = (u.floor().max(0.0) as usize).min(self.m1 - 1);
        let j = (v.floor().max(0.0) as usize).min(self.m2 - 1);
        let (s, t) = (u - i as f64, v - j as f64);
        let u00 = values[self.index(i, j)];
        let u11 = values[self.index(i + 1, j + 1)];
        if s >= t {
            let u10 = values[self.index(i + 1, j)];
            u00 + s * (u10 - u00) + t * (u11 - u10)
        } else {
            let u01 = values[self.index(i, j + 1)];
            u00 + t * (u01 - u00) + s * (u11 - u01)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeCondition {
    NeumannZero,
    DirichletZero,
    TransparentRobin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub x1_zero: EdgeCondition,
    pub x2_zero: EdgeCondition,
    pub x1_max: EdgeCondition,
    pub x2_max: EdgeCondition,
}

impl EdgeSpec {
    /// No flux on the axes, zero value on the far edges.
    pub fn basket_dirichlet() -> Self {
        Self {
            x1_zero: EdgeCondition::NeumannZero,
            x2_zero: EdgeCondition::NeumannZero,
            x1_max: EdgeCondition::DirichletZero,
            x2_max: EdgeCondition::DirichletZero,
        }
    }

    /// No flux on the axes, transparent far edges.
    pub fn basket_transparent() -> Self {
        Self {
            x1_max: EdgeCondition::TransparentRobin,
            x2_max: EdgeCondition::TransparentRobin,
            ..Self::basket_dirichlet()
        }
    }

    pub fn all_dirichlet() -> Self {
        Self {
            x1_zero: EdgeCondition::DirichletZero,
            x2_zero: EdgeCondition::DirichletZero,
            x1_max: EdgeCondition::DirichletZero,
            x2_max: EdgeCondition::DirichletZero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x1_zero == EdgeCondition::TransparentRobin
            || self.x2_zero == EdgeCondition::TransparentRobin
        {
            return Err(Error::Config(
                "transparent conditions are only defined on the far edges".into(),
            ));
        }
        Ok(())
    }

    /// Indices of nodes not lying on a Dirichlet edge, ascending.
    pub fn free_nodes(&self, mesh: &Mesh2D) -> Vec<usize> {
        let d = EdgeCondition::DirichletZero;
        let mut free = Vec::with_capacity(mesh.node_count());
        for j in 0..=mesh.m2 {
            for i in 0..=mesh.m1 {
                let fixed = (i == 0 && self.x1_zero == d)
                    || (j == 0 && self.x2_zero == d)
                    || (i == mesh.m1 && self.x1_max == d)
                    || (j == mesh.m2 && self.x2_max == d);
                if !fixed {
                    free.push(mesh.index(i, j));
                }
            }
        }
        free
    }
}

/// `(K - max(x1, x2))_+`.
pub fn payoff_basket_maxput(x1: f64, x2: f64, strike: f64) -> f64 {
    (strike - x1.max(x2)).max(0.0)
}

struct Triangle {
    area: f64,
    verts: [[f64; 2]; 3],
    grads: [[f64; 2]; 3],
}

impl Triangle {
    fn new(verts: [[f64; 2]; 3]) -> Self {
        let [p0, p1, p2] = verts;
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let grads = std::array::from_fn(|k| {
            let a = verts[(k + 1) % 3];
            let b = verts[(k + 2) % 3];
            [(a[1] - b[1]) / det, (b[0] - a[0]) / det]
        });
        Self {
            area: 0.5 * det,
            verts,
            grads,
        }
    }

    fn barycentric(&self, k: usize, x: [f64; 2]) -> f64 {
        let v = self.verts[k];
        let g = self.grads[k];
        1.0 + g[0] * (x[0] - v[0]) + g[1] * (x[1] - v[1])
    }
}

/// Points and basis values of the edge-midpoint rule; weights are `area / 3`.
fn midpoint_rule(tri: &Triangle) -> [([f64; 2], [f64; 3]); 3] {
    std::array::from_fn(|e| {
        let (a, b) = (e, (e + 1) % 3);
        let pa = tri.verts[a];
        let pb = tri.verts[b];
        let mut phi = [0.0; 3];
        phi[a] = 0.5;
        phi[b] = 0.5;
        ([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])], phi)
    })
}

/// Real matrices of the spatial operator over all nodes.
#[derive(Debug, Clone)]
pub struct BasketOperator2D {
    pub mesh: Mesh2D,
    pub basket: Basket2D,
    pub mass: CsrMatrix<f64>,
    /// Row `i`, column `j` holds the spatial form with trial `phi_j`, test `phi_i`.
    pub stiffness: CsrMatrix<f64>,
    /// Consistent line mass on the edge `x1 = L1`.
    pub edge_mass_x1_max: CsrMatrix<f64>,
    /// Consistent line mass on the edge `x2 = L2`.
    pub edge_mass_x2_max: CsrMatrix<f64>,
}

impl BasketOperator2D {
    pub fn new(mesh: Mesh2D, basket: Basket2D) -> Self {
        let n = mesh.node_count();
        let a = basket.a;
        let b = basket.convection();
        let tris = mesh.triangles();
        let mut m_trip = Vec::with_capacity(9 * tris.len());
        let mut k_trip = Vec::with_capacity(9 * tris.len());
        for t in &tris {
            let tri = Triangle::new(t.map(|k| mesh.coords(k)));
            let w = tri.area / 3.0;
            let rule = midpoint_rule(&tri);
            for (row, &gi) in t.iter().enumerate() {
                for (col, &gj) in t.iter().enumerate() {
                    let (di, dj) = (tri.grads[row], tri.grads[col]);
                    let mut m = 0.0;
                    let mut k = 0.0;
                    for (x, phi) in &rule {
                        let mut diff = 0.0;
                        for p in 0..2 {
                            for s in 0..2 {
                                diff += 0.5 * a[p][s] * x[p] * x[s] * dj[s] * di[p];
                            }
                        }
                        let conv = (b[0] * x[0] * dj[0] + b[1] * x[1] * dj[1]) * phi[row];
                        let mass = phi[row] * phi[col];
                        m += w * mass;
                        k += w * (diff + conv + basket.r * mass);
                    }
                    m_trip.push((gi, gj, m));
                    k_trip.push((gi, gj, k));
                }
            }
        }
        let edge = |nodes: Vec<usize>, h: f64| {
            let mut trip = Vec::new();
            for pair in nodes.windows(2) {
                let (p, q) = (pair[0], pair[1]);
                trip.extend([
                    (p, p, h / 3.0),
                    (q, q, h / 3.0),
                    (p, q, h / 6.0),
                    (q, p, h / 6.0),
                ]);
            }
            CsrMatrix::from_triplets(n, n, &trip)
        };
        let right = (0..=mesh.m2).map(|j| mesh.index(mesh.m1, j)).collect();
        let top = (0..=mesh.m1).map(|i| mesh.index(i, mesh.m2)).collect();
        Self {
            mesh,
            basket,
            mass: CsrMatrix::from_triplets(n, n, &m_trip),
            stiffness: CsrMatrix::from_triplets(n, n, &k_trip),
            edge_mass_x1_max: edge(right, mesh.h2()),
            edge_mass_x2_max: edge(top, mesh.h1()),
        }
    }

    /// Factors `-(1/2) a_kk L_k^2 c_k(z)` multiplying the two far-edge line masses.
    pub fn robin_factors(&self, z: Complex64) -> Result<[Complex64; 2]> {
        let bk = &self.basket;
        let (l1, l2) = (self.mesh.l1, self.mesh.l2);
        let c1 = robin_coefficient(z, bk.r, bk.a[0][0].sqrt(), l1)?;
        let c2 = robin_coefficient(z, bk.r, bk.a[1][1].sqrt(), l2)?;
        Ok([
            -0.5 * bk.a[0][0] * l1 * l1 * c1,
            -0.5 * bk.a[1][1] * l2 * l2 * c2,
        ])
    }

    /// `z M + K` plus the Robin terms selected by `edges`, over all nodes.
    pub fn shifted(&self, z: Complex64, edges: &EdgeSpec) -> Result<CsrMatrix<Complex64>> {
        let one = Complex64::new(1.0, 0.0);
        let mut terms = vec![(z, &self.mass), (one, &self.stiffness)];
        let robin = EdgeCondition::TransparentRobin;
        if edges.x1_max == robin || edges.x2_max == robin {
            let [f1, f2] = self.robin_factors(z)?;
            if edges.x1_max == robin {
                terms.push((f1, &self.edge_mass_x1_max));
            }
            if edges.x2_max == robin {
                terms.push((f2, &self.edge_mass_x2_max));
            }
        }
        Ok(CsrMatrix::combine(&terms))
    }
}

/// Sutherland-Hodgman clip of a convex polygon to `n . x <= c`.
fn clip(poly: &[[f64; 2]], n: [f64; 2], c: f64) -> Vec<[f64; 2]> {
    let side = |p: [f64; 2]| n[0] * p[0] + n[1] * p[1] - c;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let p = poly[k];
        let q = poly[(k + 1) % poly.len()];
        let (sp, sq) = (side(p), side(q));
        if sp <= 0.0 {
            out.push(p);
        }
        if (sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0) {
            let t = sp / (sp - sq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

/// Exact `(u0, phi_k)` for the max-put payoff.
///
/// Each triangle is cut into the parts where `x1 >= x2` and `x2 > x1` inside
/// the payoff support; the payoff is linear on each part.
pub fn basket_load(mesh: &Mesh2D, strike: f64) -> Vec<f64> {
    let mut load = vec![0.0; mesh.node_count()];
    for t in mesh.triangles() {
        let tri = Triangle::new(t.map(|k| mesh.coords(k)));
        // (half-plane for the branch, support cut, index of the active coordinate)
        let pieces = [([-1.0, 1.0], [1.0, 0.0], 0), ([1.0, -1.0], [0.0, 1.0], 1)];
        for (branch, cut, axis) in pieces {
            let poly = clip(&clip(&tri.verts, branch, 0.0), cut, strike);
            for f in 1..poly.len().saturating_sub(1) {
                let sub = Triangle::new([poly[0], poly[f], poly[f + 1]]);
                if !(sub.area > 0.0) {
                    continue;
                }
                for (x, _) in midpoint_rule(&sub) {
                    let u0 = strike - x[axis];
                    for (local, &global) in t.iter().enumerate() {
                        load[global] += sub.area / 3.0 * u0 * tri.barycentric(local, x);
                    }
                }
            }
        }
    }
    load
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Solver2D {
    /// Band LU with partial pivoting.
    Banded,
    /// ILU(0)-preconditioned BiCGSTAB.
    Iterative { rel_tol: f64, max_iter: usize },
}

/// Relative residual accepted from a 2D solve.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

/// Solves a reduced sparse system; the relative residual must not exceed
/// [`SOLVE_TOLERANCE`].
pub fn solve2d(
    matrix: &CsrMatrix<Complex64>,
    rhs: &[Complex64],
    solver: Solver2D,
) -> Result<Vec<Complex64>> {
    let x = match solver {
        Solver2D::Banded => BandedLu::factor(matrix)?.solve(rhs),
        Solver2D::Iterative { rel_tol, max_iter } => {
            let ilu = Ilu0::new(matrix)?;
            let opts = IterativeOptions { rel_tol, max_iter };
            bicgstab(matrix, &ilu, rhs, None, opts)?.0
        }
    };
    let bnorm = norm2(rhs);
    if bnorm > 0.0 {
        let mut r = matrix.mul_vec(&x);
        for (ri, &bi) in r.iter_mut().zip(rhs) {
            *ri = bi - *ri;
        }
        let rel = norm2(&r) / bnorm;
        if !(rel <= SOLVE_TOLERANCE) {
            return Err(Error::Residual {
                residual: rel,
                bound: SOLVE_TOLERANCE,
            });
        }
    }
    Ok(x)
}

/// Basket put on a fixed mesh, ready to be solved at any `z`.
#[derive(Debug, Clone)]
pub struct BasketProblem2D {
    pub operator: BasketOperator2D,
    pub edges: EdgeSpec,
    pub load: Vec<f64>,
    pub free: Vec<usize>,
    pub solver: Solver2D,
}

impl BasketProblem2D {
    pub fn new(basket: Basket2D, m1: usize, m2: usize, edges: EdgeSpec, solver: Solver2D) -> Result<Self> {
        basket.validate()?;
        edges.validate()?;
        let mesh = Mesh2D::uniform(basket.l1, basket.l2, m1, m2);
        Ok(Self {
            operator: BasketOperator2D::new(mesh, basket),
            edges,
            load: basket_load(&mesh, basket.strike),
            free: edges.free_nodes(&mesh),
            solver,
        })
    }

    pub fn mesh(&self) -> &Mesh2D {
        &self.operator.mesh
    }

    /// Matrix and right-hand side restricted to the free nodes.
    pub fn system(&self, z: Complex64) -> Result<(CsrMatrix<Complex64>, Vec<Complex64>)> {
        let full = self.operator.shifted(z, &self.edges)?;
        let matrix = full.submatrix(&self.free, &self.free);
        let rhs = self.free.iter().map(|&k| Complex64::new(self.load[k], 0.0)).collect();
        Ok((matrix, rhs))
    }

    pub fn solve_at(&self, z: Complex64) -> Result<ComplexField> {
        let (matrix, rhs) = self.system(z)?;
        let free = solve2d(&matrix, &rhs, self.solver)?;
        let mut values = vec![Complex64::new(0.0, 0.0); self.mesh().node_count()];
        for (&k, v) in self.free.iter().zip(free) {
            values[k] = v;
        }
        Ok(ComplexField { values })
    }
}

impl NodeSolver for BasketProblem2D {
    fn solve_node(&self, z: Complex64) -> Result<Vec<Complex64>> {
        Ok(self.solve_at(z)?.values)
    }
}

/// `||u - u_ref|| / ||u_ref||` in `L2` over the domain of `mesh`.
///
/// The reference mesh must refine `mesh` by integer factors from the same
/// origin and cover it; the integrals are then exact on reference triangles.
pub fn relative_l2_error(
    mesh: &Mesh2D,
    values: &[f64],
    reference_mesh: &Mesh2D,
    reference: &[f64],
) -> Result<f64> {
    let ratio = |coarse: f64, fine: f64| {
        let q = coarse / fine;
        let k = q.round();
        ((q - k).abs() < 1e-9 && k >= 1.0).then_some(k as usize)
    };
    let (Some(k1), Some(k2)) = (
        ratio(mesh.h1(), reference_mesh.h1()),
        ratio(mesh.h2(), reference_mesh.h2()),
    ) else {
        return Err(Error::Domain("reference mesh does not refine the mesh".into()));
    };
    let (n1, n2) = (mesh.m1 * k1, mesh.m2 * k2);
    if n1 > reference_mesh.m1 || n2 > reference_mesh.m2 {
        return Err(Error::Domain("reference mesh does not cover the domain".into()));
    }
    let (hf1, hf2) = (reference_mesh.h1(), reference_mesh.h2());
    let area = hf1 * hf2 / 6.0;
    // fine point in half-index units -> coarse interpolant
    let coarse_at = |u2: usize, v2: usize| -> f64 {
        let u = u2 as f64 / (2 * k1) as f64;
        let v = v2 as f64 / (2 * k2) as f64;
        mesh.interpolate(values, u * mesh.h1(), v * mesh.h2())
    };
    let mut err = 0.0;
    let mut norm = 0.0;
    for j in 0..n2 {
        for i in 0..n1 {
            let f = |a: usize, b: usize| reference[reference_mesh.index(a, b)];
            let (f00, f10, f01, f11) = (f(i, j), f(i + 1, j), f(i, j + 1), f(i + 1, j + 1));
            let (ci, cj) = (2 * i, 2 * j);
            // edge midpoints of (00, 10, 11) and (00, 11, 01), in half-index units
            let mids = [
                ((ci + 1, cj), 0.5 * (f00 + f10)),
                ((ci + 2, cj + 1), 0.5 * (f10 + f11)),
                ((ci + 1, cj + 1), 0.5 * (f00 + f11)),
                ((ci + 1, cj + 1), 0.5 * (f00 + f11)),
                ((ci + 1, cj + 2), 0.5 * (f11 + f01)),
                ((ci, cj + 1), 0.5 * (f01 + f00)),
            ];
            for ((u2, v2), fine) in mids {
                let d = fine - coarse_at(u2, v2);
                err += area * d * d;
                norm += area * fine * fine;
            }
        }
    }
    if norm == 0.0 {
        return Err(Error::DegenerateInput("reference field vanishes".into()));
    }
    Ok((err / norm).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn example3(l: f64) -> Basket2D {
        Basket2D {
            r: 0.05,
            a: [[0.09, -0.018], [-0.018, 0.09]],
            strike: 100.0,
            maturity: 1.0,
            l1: l,
            l2: l,
        }
    }

    #[test]
    fn payoff_values() {
        assert_eq!(payoff_basket_maxput(0.0, 0.0, 100.0), 100.0);
        assert_eq!(payoff_basket_maxput(100.0, 30.0, 100.0), 0.0);
        assert_eq!(payoff_basket_maxput(40.0, 70.0, 100.0), 30.0);
    }

    #[test]
    fn basket_validation() {
        assert!(example3(300.0).validate().is_ok());
        let mut b = example3(300.0);
        b.a[0][1] = 0.01;
        assert!(b.validate().is_err());
        b.a = [[0.09, 0.1], [0.1, 0.09]];
        assert!(b.validate().is_err());
        let e = EdgeSpec {
            x1_zero: EdgeCondition::TransparentRobin,
            ..EdgeSpec::basket_dirichlet()
        };
        assert!(e.validate().is_err());
    }

    #[test]
    fn free_nodes_respect_corners() {
        let mesh = Mesh2D::uniform(1.0, 1.0, 3, 2);
        let free = EdgeSpec::basket_dirichlet().free_nodes(&mesh);
        assert_eq!(free.len(), 3 * 2);
        assert!(free.contains(&mesh.index(0, 0)));
        assert!(!free.contains(&mesh.index(3, 0)));
        assert!(!free.contains(&mesh.index(0, 2)));
        assert_eq!(EdgeSpec::basket_transparent().free_nodes(&mesh).len(), 12);
        assert_eq!(EdgeSpec::all_dirichlet().free_nodes(&mesh).len(), 2);
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        let mesh = Mesh2D::uniform(3.0, 2.0, 3, 4);
        let f = |x: [f64; 2]| 1.5 - 2.0 * x[0] + 0.25 * x[1];
        let values: Vec<f64> = (0..mesh.node_count()).map(|k| f(mesh.coords(k))).collect();
        for (x1, x2) in [(0.3, 0.1), (2.9, 1.99), (1.0, 0.5), (3.0, 2.0), (0.75, 0.9)] {
            assert!((mesh.interpolate(&values, x1, x2) - f([x1, x2])).abs() < 1e-13);
        }
    }

    /// Integral of `f` over the triangle by a collapsed-square Gauss rule.
    fn duffy(tri: &Triangle, f: impl Fn([f64; 2]) -> f64) -> f64 {
        const G: [(f64, f64); 5] = [
            (0.0, 0.568_888_888_888_888_9),
            (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (-0.906_179_845_938_664_0, 0.236_926_885_056_189_1),
            (0.906_179_845_938_664_0, 0.236_926_885_056_189_1),
        ];
        let [p0, p1, p2] = tri.verts;
        let mut sum = 0.0;
        for (a, wa) in G {
            for (b, wb) in G {
                let u = 0.5 * (a + 1.0);
                let v = 0.5 * (b + 1.0) * (1.0 - u);
                let x = [
                    p0[0] + u * (p1[0] - p0[0]) + v * (p2[0] - p0[0]),
                    p0[1] + u * (p1[1] - p0[1]) + v * (p2[1] - p0[1]),
                ];
                sum += 0.25 * wa * wb * (1.0 - u) * f(x);
            }
        }
        2.0 * tri.area * sum
    }

    /// Entries of one interior row against an independent quadrature of the
    /// spatial form over the patch around the chosen vertex.
    #[test]
    fn interior_row_matches_quadrature() {
        let basket = example3(40.0);
        let mesh = Mesh2D::uniform(40.0, 40.0, 4, 4);
        let op = BasketOperator2D::new(mesh, basket);
        let centre = mesh.index(2, 1);
        let a = basket.a;
        let b = basket.convection();
        for neighbour in [centre, mesh.index(3, 1), mesh.index(3, 2), mesh.index(1, 0), mesh.index(2, 2)] {
            let mut k = 0.0;
            let mut m = 0.0;
            for t in mesh.triangles() {
                let (Some(row), Some(col)) = (
                    t.iter().position(|&g| g == centre),
                    t.iter().position(|&g| g == neighbour),
                ) else {
                    continue;
                };
                let tri = Triangle::new(t.map(|g| mesh.coords(g)));
                let (gi, gj) = (tri.grads[row], tri.grads[col]);
                k += duffy(&tri, |x| {
                    let mut d = 0.0;
                    for p in 0..2 {
                        for s in 0..2 {
                            d += 0.5 * a[p][s] * x[p] * x[s] * gj[s] * gi[p];
                        }
                    }
                    let (pi, pj) = (tri.barycentric(row, x), tri.barycentric(col, x));
                    d + (b[0] * x[0] * gj[0] + b[1] * x[1] * gj[1]) * pi + basket.r * pi * pj
                });
                m += duffy(&tri, |x| tri.barycentric(row, x) * tri.barycentric(col, x));
            }
            assert!((op.stiffness.get(centre, neighbour) - k).abs() < 1e-10 * k.abs().max(1.0));
            assert!((op.mass.get(centre, neighbour) - m).abs() < 1e-12 * m.abs().max(1.0));
        }
    }

    #[test]
    fn mass_sums_to_area_and_edges_to_length() {
        let op = BasketOperator2D::new(Mesh2D::uniform(30.0, 20.0, 3, 5), example3(30.0));
        let total = |m: &CsrMatrix<f64>| m.values.iter().sum::<f64>();
        assert!((total(&op.mass) - 600.0).abs() < 1e-10);
        assert!((total(&op.edge_mass_x1_max) - 20.0).abs() < 1e-12);
        assert!((total(&op.edge_mass_x2_max) - 30.0).abs() < 1e-12);
        // constants are annihilated by the derivative terms
        let ones = vec![1.0; op.mesh.node_count()];
        let k1 = op.stiffness.mul_vec(&ones);
        let m1 = op.mass.mul_vec(&ones);
        for (k, m) in k1.iter().zip(&m1) {
            assert!((k - 0.05 * m).abs() < 1e-10);
        }
    }

    #[test]
    fn load_matches_fine_sampling() {
        let mesh = Mesh2D::uniform(150.0, 150.0, 3, 3);
        let load = basket_load(&mesh, 100.0);
        // total load is the payoff integral: 2 * int_0^K (K - s) s ds = K^3 / 3
        let total: f64 = load.iter().sum();
        assert!((total - 1e6 / 3.0).abs() < 1e-8 * total);
        // per-node values against a fine midpoint sum of u0 * phi_k
        let fine = 600;
        let h = 150.0 / fine as f64;
        let basis = |k: usize, x: [f64; 2]| {
            let mut hat = vec![0.0; mesh.node_count()];
            hat[k] = 1.0;
            mesh.interpolate(&hat, x[0], x[1])
        };
        for k in [mesh.index(0, 0), mesh.index(1, 1), mesh.index(2, 1), mesh.index(1, 2)] {
            let mut s = 0.0;
            for a in 0..fine {
                for b in 0..fine {
                    let x = [(a as f64 + 0.5) * h, (b as f64 + 0.5) * h];
                    s += h * h * payoff_basket_maxput(x[0], x[1], 100.0) * basis(k, x);
                }
            }
            assert!((s - load[k]).abs() < 1e-3 * load[k], "node {k}: {s} vs {}", load[k]);
        }
    }

    #[test]
    fn zero_payoff_with_dirichlet_edges_gives_zero() {
        let mut p = BasketProblem2D::new(example3(300.0), 6, 6, EdgeSpec::all_dirichlet(), Solver2D::Banded).unwrap();
        p.load.iter_mut().for_each(|v| *v = 0.0);
        let u = p.solve_at(c(2.0, 3.0)).unwrap();
        assert!(u.values.iter().all(|v| *v == c(0.0, 0.0)));
    }

    #[test]
    fn conjugate_z_gives_conjugate_field() {
        for edges in [EdgeSpec::basket_dirichlet(), EdgeSpec::basket_transparent()] {
            let p = BasketProblem2D::new(example3(150.0), 8, 8, edges, Solver2D::Banded).unwrap();
            let z = c(-4.0, 9.0);
            let u = p.solve_at(z).unwrap();
            let v = p.solve_at(z.conj()).unwrap();
            let scale = u.values.iter().fold(0.0f64, |m, x| m.max(x.norm()));
            for (a, b) in u.values.iter().zip(&v.values) {
                assert!((a.conj() - b).norm() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn second_order_part_is_symmetric() {
        let basket = example3(60.0);
        let op = BasketOperator2D::new(Mesh2D::uniform(60.0, 60.0, 5, 4), basket);
        // a rate that cancels both convection coefficients leaves only
        // the symmetric diffusion and mass parts
        let a = basket.a;
        let balanced = Basket2D {
            r: 0.5 * (2.0 * a[0][0] + a[1][0]),
            ..basket
        };
        assert!(balanced.convection()[0].abs() < 1e-15);
        assert!(balanced.convection()[1].abs() < 1e-15);
        let op_sym = BasketOperator2D::new(op.mesh, balanced);
        let z = c(1.5, 0.0);
        let m = op_sym.shifted(z, &EdgeSpec::basket_transparent()).unwrap();
        let mt = m.transpose();
        for i in 0..m.nrows {
            for (j, v) in m.row(i) {
                assert!((v - mt.get(i, j)).norm() <= 1e-12 * v.norm().max(1.0));
            }
        }
        // with convection present the transpose differs
        let k = &op.stiffness;
        let kt = k.transpose();
        let asym = (0..k.nrows)
            .flat_map(|i| k.row(i).map(move |(j, v)| (i, j, v)))
            .map(|(i, j, v)| (v - kt.get(i, j)).abs())
            .fold(0.0, f64::max);
        assert!(asym > 1e-6);
    }

    #[test]
    fn manufactured_solution_recovered() {
        for solver in [
            Solver2D::Banded,
            Solver2D::Iterative { rel_tol: 1e-12, max_iter: 500 },
        ] {
            for edges in [EdgeSpec::basket_dirichlet(), EdgeSpec::basket_transparent()] {
                let p = BasketProblem2D::new(example3(150.0), 10, 10, edges, solver).unwrap();
                let z = c(1.2, 4.0);
                let (matrix, _) = p.system(z).unwrap();
                let exact: Vec<Complex64> = p
                    .free
                    .iter()
                    .map(|&k| {
                        let [x1, x2] = p.mesh().coords(k);
                        c(x1 * (150.0 - x1) * (1.0 + x2), 0.1 * x2)
                    })
                    .collect();
                let rhs = matrix.mul_vec(&exact);
                let got = solve2d(&matrix, &rhs, solver).unwrap();
                let scale = exact.iter().fold(0.0f64, |m, x| m.max(x.norm()));
                for (g, e) in got.iter().zip(&exact) {
                    assert!((g - e).norm() <= 1e-8 * scale, "{solver:?}");
                }
            }
        }
    }

    #[test]
    fn identity_system_returns_rhs() {
        let a = CsrMatrix::<Complex64>::identity(7);
        let b: Vec<_> = (0..7).map(|k| c(k as f64, 1.0)).collect();
        assert_eq!(solve2d(&a, &b, Solver2D::Banded).unwrap(), b);
    }

    #[test]
    fn relative_error_on_nested_meshes() {
        let fine = Mesh2D::uniform(8.0, 8.0, 8, 8);
        let coarse = Mesh2D::uniform(4.0, 4.0, 2, 2);
        let f = |x: [f64; 2]| 2.0 + x[0] - 0.5 * x[1];
        let fv: Vec<f64> = (0..fine.node_count()).map(|k| f(fine.coords(k))).collect();
        let cv: Vec<f64> = (0..coarse.node_count()).map(|k| f(coarse.coords(k))).collect();
        assert!(relative_l2_error(&coarse, &cv, &fine, &fv).unwrap() < 1e-14);
        // constant offset: ||c|| / ||f|| over [0, 4]^2
        let shifted: Vec<f64> = cv.iter().map(|v| v + 0.5).collect();
        let e = relative_l2_error(&coarse, &shifted, &fine, &fv).unwrap();
        // int_0^4 int_0^4 (2 + x - y/2)^2 = 16 * 13.666... computed by hand
        let norm_sq: f64 = 16.0 * (4.0 + 16.0 / 3.0 + 4.0 / 3.0 + 8.0 - 4.0 - 4.0);
        assert!((e - (0.25 * 16.0 / norm_sq).sqrt()).abs() < 1e-12, "{e}");
        assert!(relative_l2_error(&Mesh2D::uniform(4.0, 4.0, 3, 3), &[0.0; 16], &fine, &fv).is_err());
        assert!(relative_l2_error(&Mesh2D::uniform(16.0, 16.0, 2, 2), &[0.0; 9], &fine, &fv).is_err());
    }
}
