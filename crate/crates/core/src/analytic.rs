//! Closed-form European put values and the error metrics used by the
//! convergence tables.

use std::f64::consts::SQRT_2;

use serde::Serialize;

use crate::error::{Error, Result};
pub use crate::erf::{erf, erfc};

/// One row of a refinement table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorRow {
    pub mesh_size: f64,
    pub elements: usize,
    pub error: f64,
    /// `None` on the first row or when either error is zero.
    pub rate: Option<f64>,
}

/// `log2(e_coarse / e_fine)`; `None` when either error is not positive.
pub fn reduction_rate(e_coarse: f64, e_fine: f64) -> Option<f64> {
    if e_coarse > 0.0 && e_fine > 0.0 {
        Some((e_coarse / e_fine).log2())
    } else {
        None
    }
}

/// Builds rows from `(mesh_size, elements, error)` triples ordered coarse to fine.
pub fn error_rows(entries: &[(f64, usize, f64)]) -> Vec<ErrorRow> {
    entries
        .iter()
        .enumerate()
        .map(|(k, &(mesh_size, elements, error))| ErrorRow {
            mesh_size,
            elements,
            error,
            rate: if k == 0 {
                None
            } else {
                reduction_rate(entries[k - 1].2, error)
            },
        })
        .collect()
}

/// Standard normal distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn payoff_put(x: f64, strike: f64) -> f64 {
    (strike - x).max(0.0)
}

/// Black-Scholes value of a European put with time to maturity `t`.
pub fn bs_put(x: f64, t: f64, strike: f64, r: f64, sigma: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("time to maturity must be positive, got {t}")));
    }
    if !(sigma > 0.0) || !(strike > 0.0) {
        return Err(Error::Domain(format!(
            "volatility and strike must be positive, got sigma = {sigma}, K = {strike}"
        )));
    }
    let discounted = strike * (-r * t).exp();
    if x <= 0.0 {
        return Ok(discounted);
    }
    let vol = sigma * t.sqrt();
    let d1 = ((x / strike).ln() + (r + 0.5 * sigma * sigma) * t) / vol;
    let d2 = d1 - vol;
    Ok(discounted * norm_cdf(-d2) - x * norm_cdf(-d1))
}

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664_0, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664_0, 0.236_926_885_056_189_1),
];

/// `L2(0, length)` distance between the piecewise-linear interpolant of
/// nodal values on a uniform mesh and `exact`, by 5-point Gauss per element.
pub fn l2_error(numeric: &[f64], exact: impl Fn(f64) -> f64, length: f64) -> f64 {
    assert!(numeric.len() >= 2, "need at least one element");
    let elements = numeric.len() - 1;
    let h = length / elements as f64;
    let mut total = 0.0;
    for e in 0..elements {
        let a = e as f64 * h;
        let (ua, ub) = (numeric[e], numeric[e + 1]);
        let mut local = 0.0;
        for (xi, w) in GAUSS5 {
            let s = 0.5 * (xi + 1.0);
            let x = a + s * h;
            let diff = ua + s * (ub - ua) - exact(x);
            local += w * diff * diff;
        }
        total += 0.5 * h * local;
    }
    total.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// erf from the all-positive series `exp(-x^2) sum 2^n x^(2n+1) / (2n+1)!!`
    /// below 1, and as `1 - erfc` from the Laplace continued fraction above.
    fn erf_oracle(x: f64) -> f64 {
        if x >= 1.0 {
            return 1.0 - erfc_fraction(x);
        }
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term > 1e-18 * sum {
            n += 1.0;
            term *= 2.0 * x2 / (2.0 * n + 1.0);
            sum += term;
        }
        2.0 / PI.sqrt() * (-x2).exp() * sum
    }

    /// `erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))`,
    /// evaluated bottom-up from a fixed depth.
    fn erfc_fraction(x: f64) -> f64 {
        let mut tail = x;
        for k in (1..400).rev() {
            tail = x + 0.5 * k as f64 / tail;
        }
        (-x * x).exp() / PI.sqrt() / tail
    }

    #[test]
    fn erf_reference_points() {
        assert_eq!(erf(0.0), 0.0);
        assert!((erf(1.0) - 0.842_700_792_949_715).abs() < 1e-15);
        assert!((erf(1.0) - erf_oracle(1.0)).abs() < 1e-15);
        assert_eq!(erf(40.0), 1.0);
        assert_eq!(erf(-40.0), -1.0);
        assert_eq!(erfc(0.0), 1.0);
    }

    #[test]
    fn erf_matches_series_oracle_on_grid() {
        let mut worst: f64 = 0.0;
        for k in 0..=600 {
            let x = k as f64 * 0.01;
            worst = worst.max((erf(x) - erf_oracle(x)).abs());
            assert_eq!(erf(-x), -erf(x));
            assert!((erf(x) + erfc(x) - 1.0).abs() < 2e-16);
        }
        assert!(worst <= 1e-15, "worst deviation {worst:e}");
    }

    #[test]
    fn erf_derivative_matches_gaussian() {
        let h = 1e-4;
        for k in 0..40 {
            let x = -3.0 + 0.15 * k as f64;
            let fd = (erf(x + h) - erf(x - h)) / (2.0 * h);
            let exact = 2.0 / PI.sqrt() * (-x * x).exp();
            assert!((fd - exact).abs() < 1e-7, "x = {x}");
        }
    }

    #[test]
    fn put_limits() {
        let v = bs_put(0.0, 1.0, 50.0, 0.05, 0.3).unwrap();
        assert!((v - 50.0 * (-0.05f64).exp()).abs() < 1e-12);
        assert!((v - 47.5615).abs() < 1e-4);
        assert!(bs_put(1e5, 1.0, 50.0, 0.05, 0.3).unwrap().abs() < 1e-100);
        assert!(bs_put(50.0, 0.0, 50.0, 0.05, 0.3).is_err());
    }

    /// Risk-neutral expectation of the put payoff by composite Gauss-Legendre
    /// over the standard normal variable.
    fn put_by_quadrature(x: f64, t: f64, k: f64, r: f64, sigma: f64) -> f64 {
        let vol = sigma * t.sqrt();
        let drift = (r - 0.5 * sigma * sigma) * t;
        let z_star = ((k / x).ln() - drift) / vol;
        let (a, b) = (-12.0f64, z_star);
        let panels = 4000;
        let h = (b - a) / panels as f64;
        let mut sum = 0.0;
        for p in 0..panels {
            let left = a + p as f64 * h;
            for (xi, w) in GAUSS5 {
                let z = left + 0.5 * (xi + 1.0) * h;
                let s_t = x * (drift + vol * z).exp();
                let density = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
                sum += 0.5 * h * w * (k - s_t) * density;
            }
        }
        (-r * t).exp() * sum
    }

    #[test]
    fn put_matches_quadrature_oracle() {
        for x in [50.0, 30.0, 75.0] {
            let closed = bs_put(x, 1.0, 50.0, 0.05, 0.3).unwrap();
            let quad = put_by_quadrature(x, 1.0, 50.0, 0.05, 0.3);
            assert!((closed - quad).abs() <= 1e-10, "x = {x}: {closed} vs {quad}");
        }
    }

    #[test]
    fn put_is_monotone_bounded_convex() {
        let bound = 50.0 * (-0.05f64).exp();
        let h = 0.5;
        let values: Vec<f64> = (0..400)
            .map(|k| bs_put(k as f64 * h, 1.0, 50.0, 0.05, 0.3).unwrap())
            .collect();
        for w in values.windows(3) {
            assert!(w[1] <= w[0] + 1e-12);
            assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-12);
        }
        assert!(values.iter().all(|&v| v <= bound + 1e-12 && v >= 0.0));
    }

    #[test]
    fn l2_error_cases() {
        let nodes: Vec<f64> = (0..11).map(|k| (k as f64).powi(2)).collect();
        let exact_interp = |x: f64| {
            let e = (x.floor() as usize).min(9);
            let s = x - e as f64;
            nodes[e] + s * (nodes[e + 1] - nodes[e])
        };
        assert!(l2_error(&nodes, exact_interp, 10.0) < 1e-12);

        let shifted: Vec<f64> = nodes.iter().map(|v| v + 0.3).collect();
        let e = l2_error(&shifted, exact_interp, 10.0);
        assert!((e - 0.3 * 10f64.sqrt()).abs() < 1e-12);

        // hat of height one on a single element of width h: norm^2 = h / 3
        let h = 2.5;
        let e = l2_error(&[0.0, 1.0], |_| 0.0, h);
        assert!((e - (h / 3.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rates() {
        assert_eq!(reduction_rate(4.0, 1.0), Some(2.0));
        assert!((reduction_rate(0.7536, 0.1878).unwrap() - 2.004).abs() < 1e-3);
        assert_eq!(reduction_rate(0.3, 0.3), Some(0.0));
        assert_eq!(reduction_rate(0.0, 1.0), None);
        let rows = error_rows(&[(1.0, 1, 4.0), (0.5, 2, 1.0), (0.25, 4, 0.0)]);
        assert_eq!(rows[0].rate, None);
        assert_eq!(rows[1].rate, Some(2.0));
        assert_eq!(rows[2].rate, None);
    }

    #[test]
    fn payoff_values() {
        assert_eq!(payoff_put(0.0, 50.0), 50.0);
        assert_eq!(payoff_put(50.0, 50.0), 0.0);
        assert_eq!(payoff_put(30.0, 50.0), 20.0);
    }
}
