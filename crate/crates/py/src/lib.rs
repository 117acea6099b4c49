//! Python bindings: contours, one-asset and basket pricing, scalar inversion
//! and the experiment runner.

use std::cell::RefCell;
use std::path::PathBuf;

use ::laplace_pricing::analytic::bs_put;
use ::laplace_pricing::cli::{run, unix_now, write_outputs, ExperimentConfig};
use ::laplace_pricing::contour::{self, ContourParams};
use ::laplace_pricing::fem1d::{BoundarySpec, Market1D, Payoff1D, PutProblem1D};
use ::laplace_pricing::fem2d::{Basket2D, BasketProblem2D, EdgeSpec, Solver2D};
use ::laplace_pricing::inversion::{invert_at, invert_scalar};
use ::laplace_pricing::parallel::solve_ensemble;
use ::laplace_pricing::{Complex64, Error};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(laplace_pricing, PricingError, PyException);

fn py_err(e: Error) -> PyErr {
    PricingError::new_err(e.to_string())
}

/// Hyperbolic inversion contour with `n` nodes on the upper half.
#[pyclass(name = "Contour", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyContour {
    inner: ContourParams,
}

#[pymethods]
impl PyContour {
    #[new]
    fn new(gamma: f64, nu: f64, s: f64, tau: f64, n: usize) -> Self {
        Self {
            inner: ContourParams::new(gamma, nu, s, tau, n),
        }
    }

    /// Tabulated rows for the one-asset put, keyed by node count.
    #[staticmethod]
    fn tabulated() -> Vec<PyContour> {
        contour::example1_contours()
            .into_iter()
            .map(|inner| Self { inner })
            .collect()
    }

    #[staticmethod]
    fn basket() -> Self {
        Self {
            inner: contour::example3_contour(),
        }
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn crossing(&self) -> f64 {
        self.inner.crossing()
    }

    /// `(j, z_j, w_j)` for `j = -n+1 .. n-1`.
    fn nodes(&self) -> Vec<(i64, Complex64, Complex64)> {
        self.inner
            .nodes()
            .into_iter()
            .map(|q| (q.j, q.z, q.weight))
            .collect()
    }

    /// Raises `PricingError` if the contour violates the admissibility rules.
    fn ensure_valid(&self, kappa: f64) -> PyResult<()> {
        self.inner.ensure_valid(kappa).map_err(py_err)
    }

    /// Inverts a scalar transform given as a Python callable at time `t`.
    fn invert(&self, transform: Bound<'_, PyAny>, t: f64) -> PyResult<f64> {
        let failure = RefCell::new(None);
        let value = invert_scalar(
            |z| match transform.call1((z,)).and_then(|v| v.extract::<Complex64>()) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    Complex64::new(f64::NAN, f64::NAN)
                }
            },
            &self.inner,
            t,
        )
        .map_err(py_err)?;
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(value),
        }
    }

    fn __repr__(&self) -> String {
        let c = self.inner;
        format!(
            "Contour(gamma={}, nu={}, s={}, tau={}, n={})",
            c.gamma, c.nu, c.s, c.tau, c.n
        )
    }
}

/// One-asset market on `[0, truncation]`.
#[pyclass(name = "Market", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyMarket {
    inner: Market1D,
}

#[pymethods]
impl PyMarket {
    #[new]
    fn new(r: f64, sigma: f64, strike: f64, maturity: f64, truncation: f64) -> PyResult<Self> {
        let inner = Market1D::new(r, sigma, strike, maturity, truncation);
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Smallest admissible contour crossing for slope `s`.
    fn kappa(&self, s: f64) -> PyResult<f64> {
        let m = self.inner;
        Ok(contour::kappa_bound(
            s,
            contour::mu(m.r, m.sigma, m.sigma, true).map_err(py_err)?,
        ))
    }

    /// Closed-form European put at time to maturity `t`.
    fn exact_put(&self, x: f64, t: f64) -> PyResult<f64> {
        let m = self.inner;
        bs_put(x, t, m.strike, m.r, m.sigma).map_err(py_err)
    }

    /// Put prices at the mesh nodes at maturity; returns `(x, price, imag_residual)`.
    #[pyo3(signature = (elements, contour, transparent=false, workers=1))]
    fn price_put(
        &self,
        py: Python<'_>,
        elements: usize,
        contour: PyContour,
        transparent: bool,
        workers: usize,
    ) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
        let m = self.inner;
        let bc = if transparent {
            BoundarySpec::put_transparent(&m)
        } else {
            BoundarySpec::put_dirichlet(&m)
        };
        let problem = PutProblem1D::new(m, elements, bc, Payoff1D::Put { strike: m.strike });
        let inv = py
            .detach(|| {
                let (ensemble, _) = solve_ensemble(&problem, &contour.inner, workers)?;
                invert_at(&ensemble, m.maturity)
            })
            .map_err(py_err)?;
        Ok((
            problem.mesh().nodes(),
            inv.values.clone(),
            inv.relative_imag_residual(),
        ))
    }
}

/// Two-asset basket on `[0, l1] x [0, l2]` with the max-put payoff.
#[pyclass(name = "Basket", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyBasket {
    inner: Basket2D,
}

#[pymethods]
impl PyBasket {
    #[new]
    fn new(r: f64, a: [[f64; 2]; 2], strike: f64, maturity: f64, l1: f64, l2: f64) -> PyResult<Self> {
        let inner = Basket2D {
            r,
            a,
            strike,
            maturity,
            l1,
            l2,
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Nodal prices at maturity on an `m x m` grid, row-major in `x1`.
    #[pyo3(signature = (m, contour, transparent=false, workers=1))]
    fn price(
        &self,
        py: Python<'_>,
        m: usize,
        contour: PyContour,
        transparent: bool,
        workers: usize,
    ) -> PyResult<Vec<f64>> {
        let edges = if transparent {
            EdgeSpec::basket_transparent()
        } else {
            EdgeSpec::basket_dirichlet()
        };
        let solver = Solver2D::Iterative {
            rel_tol: 1e-11,
            max_iter: 5000,
        };
        let b = self.inner;
        py.detach(|| {
            let problem = BasketProblem2D::new(b, m, m, edges, solver)?;
            let (ensemble, _) = solve_ensemble(&problem, &contour.inner, workers)?;
            Ok(invert_at(&ensemble, b.maturity)?.values)
        })
        .map_err(py_err)
    }
}

/// Runs the experiment described by a JSON configuration and writes its
/// outputs; returns the list of written files.
#[pyfunction]
#[pyo3(signature = (config, out, workers=None))]
fn run_experiment(
    py: Python<'_>,
    config: PathBuf,
    out: PathBuf,
    workers: Option<usize>,
) -> PyResult<Vec<PathBuf>> {
    py.detach(|| {
        let started = unix_now();
        let mut cfg = ExperimentConfig::from_path(&config)?;
        if let Some(w) = workers {
            cfg.workers = w;
        }
        let base = config
            .parent()
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."));
        let report = run(&cfg, &base)?;
        write_outputs(&report, &cfg, &out, started)
    })
    .map_err(py_err)
}

#[pymodule]
#[pyo3(name = "laplace_pricing")]
fn bindings(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyContour>()?;
    m.add_class::<PyMarket>()?;
    m.add_class::<PyBasket>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("PricingError", m.py().get_type::<PricingError>())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pyo3::types::PyDict;

    #[test]
    fn module_exposes_pricing_api() {
        Python::initialize();
        Python::attach(|py| {
            let m = PyModule::new(py, "laplace_pricing").unwrap();
            bindings(&m).unwrap();
            let locals = PyDict::new(py);
            locals.set_item("lp", &m).unwrap();
            py.run(
                c"
import math
c = [r for r in lp.Contour.tabulated() if r.n == 15][0]
v = c.invert(lambda z: 1 / (z * z), 1.0)
assert abs(v - 1.0) < 1e-6, v
market = lp.Market(0.05, 0.3, 50.0, 1.0, 200.0)
x, u, res = market.price_put(40, c)
assert len(x) == 41 and res <= 1e-10
try:
    c.invert(lambda z: 'no', 1.0)
    raise AssertionError('bad transform accepted')
except TypeError:
    pass
",
                None,
                Some(&locals),
            )
            .unwrap();
        });
    }
}
