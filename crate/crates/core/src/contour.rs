//! Hyperbolic inversion contour, its tanh reparameterisation and the
//! quadrature nodes used to reconstruct time-domain prices.
//!
//! The contour is `z(w) = gamma - sqrt(w^2 + nu^2) + i s w`. It crosses the
//! real axis at `gamma - nu` and opens to the left with asymptotic slope `s`.
//! The substitution `w(y) = (2/tau) artanh(y)` maps it onto `y in (-1, 1)`,
//! which is sampled at `y_j = j/N` for `|j| < N`.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourParams {
    pub gamma: f64,
    pub nu: f64,
    pub s: f64,
    pub tau: f64,
    /// Node half-count; the rule samples `j = -n+1 ..= n-1`.
    pub n: usize,
}

/// One contour sample with its folded inversion weight
/// `(1 / (2 pi i N)) z'(w_j) w'(y_j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadNode {
    pub j: i64,
    pub z: Complex64,
    pub weight: Complex64,
}

/// A constraint a contour fails to meet.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveTau(f64),
    NonPositiveNu(f64),
    NonPositiveSlope(f64),
    NoNodes,
    CrossingBelowKappa { crossing: f64, kappa: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveTau(t) => write!(f, "tanh scale tau = {t} must be positive"),
            Violation::NonPositiveNu(v) => write!(f, "hyperbola offset nu = {v} must be positive"),
            Violation::NonPositiveSlope(s) => write!(f, "asymptotic slope s = {s} must be positive"),
            Violation::NoNodes => write!(f, "node count n must be at least 1"),
            Violation::CrossingBelowKappa { crossing, kappa } => {
                write!(f, "real-axis crossing {crossing} <= kappa {kappa}")
            }
        }
    }
}

/// Coercivity shift of the transformed Black-Scholes operator.
///
/// With constant volatility this is `(r - sigma^2)^2 / sigma^2`; otherwise the
/// weighted-norm bound `(r + 2 |sigma|_Z^2)^2 / sigma_floor^2` applies.
pub fn mu(r_sup: f64, sigma_floor: f64, sigma_z_norm: f64, constant_sigma: bool) -> Result<f64> {
    if !(sigma_floor > 0.0) {
        return Err(Error::Domain(format!(
            "volatility floor must be positive, got {sigma_floor}"
        )));
    }
    let floor2 = sigma_floor * sigma_floor;
    let numerator = if constant_sigma {
        r_sup - floor2
    } else {
        r_sup + 2.0 * sigma_z_norm * sigma_z_norm
    };
    Ok(numerator * numerator / floor2)
}

/// Smallest admissible real-axis crossing for a contour of slope `s`.
pub fn kappa_bound(s: f64, mu: f64) -> f64 {
    let half_angle_tan = (0.5 * s.atan()).tan();
    (1.0 + half_angle_tan * half_angle_tan / 2.0) * mu
}

/// `w(y) = (1/tau) ln((1+y)/(1-y))`.
pub fn omega_of_y(y: f64, tau: f64) -> Result<f64> {
    if !(y.abs() < 1.0) {
        return Err(Error::Domain(format!("|y| must be below 1, got {y}")));
    }
    Ok(((1.0 + y) / (1.0 - y)).ln() / tau)
}

impl ContourParams {
    pub fn new(gamma: f64, nu: f64, s: f64, tau: f64, n: usize) -> Self {
        Self {
            gamma,
            nu,
            s,
            tau,
            n,
        }
    }

    pub fn crossing(&self) -> f64 {
        self.gamma - self.nu
    }

    pub fn z_of_omega(&self, omega: f64) -> Complex64 {
        Complex64::new(self.gamma - omega.hypot(self.nu), self.s * omega)
    }

    pub fn dz_domega(&self, omega: f64) -> Complex64 {
        Complex64::new(-omega / omega.hypot(self.nu), self.s)
    }

    /// Quadrature node `j`, for `|j| < n`.
    pub fn node(&self, j: i64) -> QuadNode {
        let n = self.n as f64;
        let y = j as f64 / n;
        // odd in j by construction so that opposite nodes are exact conjugates
        let ya = j.unsigned_abs() as f64 / n;
        let omega = (((1.0 + ya) / (1.0 - ya)).ln() / self.tau).copysign(y);
        let domega_dy = 2.0 / (self.tau * (1.0 - y * y));
        let prefactor = Complex64::new(0.0, -1.0 / (2.0 * PI * n));
        QuadNode {
            j,
            z: self.z_of_omega(omega),
            weight: prefactor * self.dz_domega(omega) * domega_dy,
        }
    }

    /// All `2n - 1` nodes, `j` ascending.
    pub fn nodes(&self) -> Vec<QuadNode> {
        let n = self.n as i64;
        (-n + 1..n).map(|j| self.node(j)).collect()
    }

    /// Nodes `j = 0 .. n-1`; the others are their conjugates.
    pub fn half_nodes(&self) -> Vec<QuadNode> {
        (0..self.n as i64).map(|j| self.node(j)).collect()
    }

    /// Checks the type invariants and that the contour passes to the right of `kappa`.
    pub fn validate(&self, kappa: f64) -> std::result::Result<(), Vec<Violation>> {
        let mut found = Vec::new();
        if !(self.tau > 0.0) {
            found.push(Violation::NonPositiveTau(self.tau));
        }
        if !(self.nu > 0.0) {
            found.push(Violation::NonPositiveNu(self.nu));
        }
        if !(self.s > 0.0) {
            found.push(Violation::NonPositiveSlope(self.s));
        }
        if self.n == 0 {
            found.push(Violation::NoNodes);
        }
        if !(self.crossing() > kappa) {
            found.push(Violation::CrossingBelowKappa {
                crossing: self.crossing(),
                kappa,
            });
        }
        if found.is_empty() {
            Ok(())
        } else {
            Err(found)
        }
    }

    /// `validate` folded into the crate error type.
    pub fn ensure_valid(&self, kappa: f64) -> Result<()> {
        self.validate(kappa).map_err(|v| {
            let msg: Vec<String> = v.iter().map(ToString::to_string).collect();
            Error::Contour(format!("n = {}: {}", self.n, msg.join("; ")))
        })
    }
}

/// Contour rows tabulated for Example 1 (evaluation time 1.0).
pub fn example1_contours() -> Vec<ContourParams> {
    [
        (3, 13.48, 12.42, 0.16500),
        (6, 26.95, 24.84, 0.09385),
        (9, 40.43, 37.26, 0.06809),
        (12, 53.90, 49.68, 0.05430),
        (15, 67.38, 62.09, 0.04556),
        (18, 80.86, 74.51, 0.03947),
        (21, 94.33, 86.93, 0.03494),
    ]
    .into_iter()
    .map(|(n, gamma, nu, tau)| ContourParams::new(gamma, nu, 0.4213, tau, n))
    .collect()
}

/// Contour used for the two-asset basket.
pub fn example3_contour() -> ContourParams {
    ContourParams::new(35.94, 33.12, 0.4213, 0.07472, 15)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mu_constant_volatility() {
        let m = mu(0.05, 0.3, 0.3, true).unwrap();
        assert!((m - 0.0016 / 0.09).abs() < 1e-15);
        assert!((m - 0.0177778).abs() < 1e-7);
        assert_eq!(mu(0.09, 0.3, 0.3, true).unwrap(), 0.0);
        assert!((mu(0.05, 0.2, 0.2, true).unwrap() - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn mu_variable_volatility_and_errors() {
        let m = mu(0.05, 0.2, 0.4, false).unwrap();
        assert!((m - (0.05f64 + 0.32).powi(2) / 0.04).abs() < 1e-14);
        assert!(matches!(mu(0.05, 0.0, 0.3, true), Err(Error::Domain(_))));
        assert!(matches!(mu(0.05, -0.1, 0.3, true), Err(Error::Domain(_))));
    }

    #[test]
    fn kappa_reference_values() {
        let m = mu(0.05, 0.3, 0.3, true).unwrap();
        assert!((kappa_bound(0.4, m) - 0.01811).abs() < 5e-6);
        assert_eq!(kappa_bound(0.0, 0.7), 0.7);
        assert!((kappa_bound(0.4213, 0.0177778) - 0.018141).abs() < 1e-6);
    }

    #[test]
    fn omega_mapping() {
        assert_eq!(omega_of_y(0.0, 2.5).unwrap(), 0.0);
        assert!((omega_of_y(0.5, 1.0).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert!(omega_of_y(1.0, 1.0).is_err());
        assert!(omega_of_y(-1.5, 1.0).is_err());
    }

    #[test]
    fn centre_node_sits_on_the_crossing() {
        for p in example1_contours() {
            let nodes = p.nodes();
            assert_eq!(nodes.len(), 2 * p.n - 1);
            let centre = nodes[p.n - 1];
            assert_eq!(centre.j, 0);
            assert_eq!(centre.z, Complex64::new(p.gamma - p.nu, 0.0));
            assert_eq!(centre.weight.im, 0.0);
        }
        let p = example1_contours()[0];
        assert!((p.nodes()[2].z.re - 1.06).abs() < 1e-12);
    }

    #[test]
    fn conjugate_symmetry_nodewise() {
        for p in example1_contours() {
            let nodes = p.nodes();
            let k = nodes.len();
            for a in 0..k {
                let (lo, hi) = (nodes[a], nodes[k - 1 - a]);
                assert_eq!(lo.j, -hi.j);
                assert_eq!(lo.z, hi.z.conj());
                assert!((lo.weight - hi.weight.conj()).norm() <= 1e-15 * hi.weight.norm());
            }
        }
    }

    #[test]
    fn real_part_decreases_away_from_centre() {
        for p in example1_contours() {
            let half = p.half_nodes();
            for w in half.windows(2) {
                assert!(w[1].z.re < w[0].z.re);
            }
            assert!(half.iter().skip(1).all(|q| q.z.re < p.crossing()));
        }
    }

    #[test]
    fn tabulated_contours_pass_validation() {
        for p in example1_contours().into_iter().chain([example3_contour()]) {
            assert_eq!(p.validate(0.01811), Ok(()));
        }
    }

    #[test]
    fn validation_reports_named_violations() {
        let p = ContourParams::new(1.0, 1.0, 0.4213, 0.1, 3);
        let v = p.validate(0.01811).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "real-axis crossing 0 <= kappa 0.01811");
        let p = ContourParams::new(13.48, 12.42, 0.4213, 0.165, 3);
        assert!(matches!(
            p.validate(2.0).unwrap_err()[0],
            Violation::CrossingBelowKappa { .. }
        ));
        let bad = ContourParams::new(13.48, -1.0, 0.0, 0.0, 0);
        assert_eq!(bad.validate(0.0).unwrap_err().len(), 4);
    }

    proptest! {
        #[test]
        fn kappa_monotone_in_slope_and_linear_in_mu(
            s1 in 0.0f64..20.0, ds in 0.0f64..5.0, m in 0.0f64..3.0, scale in 0.0f64..10.0
        ) {
            prop_assert!(kappa_bound(s1 + ds, m) >= kappa_bound(s1, m) - 1e-15);
            let lhs = kappa_bound(s1, scale * m);
            let rhs = scale * kappa_bound(s1, m);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn omega_is_odd(y in -0.999f64..0.999, tau in 0.01f64..3.0) {
            let a = omega_of_y(y, tau).unwrap();
            let b = omega_of_y(-y, tau).unwrap();
            prop_assert!((a + b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
