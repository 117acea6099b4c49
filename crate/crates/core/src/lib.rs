//! Pricing of European and two-asset basket options by Laplace transformation
//! in time.
//!
//! Each contour node of a hyperbolic inversion contour gives an independent
//! complex elliptic problem; the time-domain price is a weighted sum of those
//! solutions. A Crank-Nicolson marcher on the same spatial discretisation is
//! provided for comparison and for building reference solutions.

pub mod analytic;
pub mod cli;
pub mod cn_baseline;
pub mod contour;
mod erf;
pub mod error;
pub mod fem1d;
pub mod fem2d;
pub mod inversion;
pub mod linalg;
pub mod parallel;

pub use error::{Error, Result};
pub use num_complex::Complex64;
