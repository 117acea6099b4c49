//! Reconstruction of time-domain values from transformed solutions.

use num_complex::Complex64;

use crate::contour::ContourParams;
use crate::error::{Error, Result};
use crate::parallel::TransformEnsemble;

/// Real field at one time plus the imaginary part left over by the full sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    pub t: f64,
    pub values: Vec<f64>,
    /// Largest `|Im|` of the full symmetric sum over the field.
    pub imag_residual: f64,
}

impl Inversion {
    /// `imag_residual / max |value|`; zero for an identically zero field.
    pub fn relative_imag_residual(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            0.0
        } else {
            self.imag_residual / scale
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `sum_{j=-N+1}^{N-1} w_j u(z_j) e^{z_j t}` in ascending `j`, with the
/// negative-index terms supplied by conjugation.
pub fn invert_at(ensemble: &TransformEnsemble, t: f64) -> Result<Inversion> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("inversion time must be positive, got {t}")));
    }
    let len = ensemble.field_len();
    let n = ensemble.nodes.len() as i64;
    let mut re = vec![Neumaier::default(); len];
    let mut im = vec![Neumaier::default(); len];
    for j in -n + 1..n {
        let k = j.unsigned_abs() as usize;
        let node = &ensemble.nodes[k];
        let field = &ensemble.fields[k];
        let (z, w) = if j < 0 {
            (node.z.conj(), node.weight.conj())
        } else {
            (node.z, node.weight)
        };
        let factor = w * (z * t).exp();
        for (i, &u) in field.iter().enumerate() {
            let u = if j < 0 { u.conj() } else { u };
            let term = factor * u;
            re[i].add(term.re);
            im[i].add(term.im);
        }
    }
    Ok(Inversion {
        t,
        values: re.iter().map(Neumaier::value).collect(),
        imag_residual: im.iter().fold(0.0f64, |m, s| m.max(s.value().abs())),
    })
}

/// Inverts the same ensemble at several times; no solve is repeated.
pub fn invert_many(ensemble: &TransformEnsemble, times: &[f64]) -> Result<Vec<Inversion>> {
    times.iter().map(|&t| invert_at(ensemble, t)).collect()
}

/// Scalar transform inverted on `contour` at time `t`.
pub fn invert_scalar(
    transform: impl Fn(Complex64) -> Complex64,
    contour: &ContourParams,
    t: f64,
) -> Result<f64> {
    let fields = contour
        .half_nodes()
        .iter()
        .map(|q| vec![transform(q.z)])
        .collect();
    let ensemble = TransformEnsemble::new(*contour, fields)?;
    Ok(invert_at(&ensemble, t)?.values[0])
}

/// Trapezoidal rule on the vertical line `Re z = alpha` with spacing `pi / period`,
/// summing `k = 0 .. n_terms - 1` with the end terms halved.
pub fn direct_trapezoid(
    alpha: f64,
    period: f64,
    n_terms: usize,
    transform: impl Fn(Complex64) -> Complex64,
    t: f64,
) -> f64 {
    let step = std::f64::consts::PI / period;
    let mut acc = Neumaier::default();
    for k in 0..n_terms {
        let omega = k as f64 * step;
        let u = transform(Complex64::new(alpha, omega));
        let mut term = u.re * (omega * t).cos() - u.im * (omega * t).sin();
        if k == 0 || k + 1 == n_terms {
            term *= 0.5;
        }
        acc.add(term);
    }
    (alpha * t).exp() / period * acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::example1_contours;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn table_contour(n: usize) -> ContourParams {
        example1_contours().into_iter().find(|p| p.n == n).unwrap()
    }

    #[test]
    fn exponential_decay_recovered() {
        let a = 0.05;
        let v = invert_scalar(|z| (z + a).inv(), &table_contour(15), 1.0).unwrap();
        let exact = (-a).exp();
        assert!(((v - exact) / exact).abs() < 1e-6, "{v} vs {exact}");
    }

    #[test]
    fn ramp_recovered() {
        let v = invert_scalar(|z| (z * z).inv(), &table_contour(15), 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn zero_ensemble_inverts_to_zero() {
        let p = table_contour(6);
        let e = TransformEnsemble::new(p, vec![vec![c(0.0, 0.0); 4]; 6]).unwrap();
        let inv = invert_at(&e, 0.7).unwrap();
        assert_eq!(inv.values, vec![0.0; 4]);
        assert_eq!(inv.relative_imag_residual(), 0.0);
    }

    #[test]
    fn non_positive_time_rejected() {
        let p = table_contour(3);
        let e = TransformEnsemble::new(p, vec![vec![c(1.0, 0.0)]; 3]).unwrap();
        assert!(invert_at(&e, 0.0).is_err());
        assert!(invert_many(&e, &[1.0, -1.0]).is_err());
    }

    fn oracle_ensemble(a: f64) -> TransformEnsemble {
        let p = table_contour(15);
        let fields = p.half_nodes().iter().map(|q| vec![(q.z + a).inv()]).collect();
        TransformEnsemble::new(p, fields).unwrap()
    }

    #[test]
    fn many_times_match_pointwise_and_permute() {
        let e = oracle_ensemble(0.05);
        let times = [0.25, 0.5, 1.0];
        let many = invert_many(&e, &times).unwrap();
        for (inv, &t) in many.iter().zip(&times) {
            assert_eq!(*inv, invert_at(&e, t).unwrap());
            let exact = (-0.05 * t).exp();
            // the tabulated N = 15 contour is tuned for t = 1; earlier times lose digits
            assert!(((inv.values[0] - exact) / exact).abs() < 1e-5, "t = {t}");
        }
        let rev = invert_many(&e, &[1.0, 0.5, 0.25]).unwrap();
        assert_eq!(rev[0], many[2]);
        assert_eq!(rev[2], many[0]);
        assert_eq!(invert_many(&e, &[1.0]).unwrap()[0], invert_at(&e, 1.0).unwrap());
    }

    #[test]
    fn imaginary_residual_is_roundoff() {
        let inv = invert_at(&oracle_ensemble(1.0), 1.0).unwrap();
        assert!(inv.relative_imag_residual() <= 1e-10);
    }

    #[test]
    fn trapezoid_baseline() {
        let a: f64 = 0.05;
        let f = |z: Complex64| (z + a).inv();
        let v = direct_trapezoid(1.0, 4.0, 10_000, f, 1.0);
        assert!((v - (-a).exp()).abs() < 1e-3, "{v}");
        assert_eq!(direct_trapezoid(1.0, 4.0, 100, |_| c(0.0, 0.0), 1.0), 0.0);
    }

    #[test]
    fn trapezoid_error_shrinks_with_more_terms() {
        let a: f64 = 0.05;
        let exact = (-a).exp();
        let errs: Vec<f64> = [16, 32, 64, 128, 256]
            .iter()
            .map(|&n| (direct_trapezoid(1.0, 4.0, n, |z| (z + a).inv(), 1.0) - exact).abs())
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] < w[0], "{errs:?}");
        }
    }
}
