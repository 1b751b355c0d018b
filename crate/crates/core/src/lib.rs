//! Linear response, characteristics and a nonlinear density loop for Landau
//! damping in the screened Vlasov-Poisson system on ℝ^d.
//!
//! The scalar-generic kernels (quadrature, interpolation, Volterra marching,
//! decay fits) take any [`Real`]; everything built on special functions or
//! FFTs runs in `f64`. The aliases below name the `f64` instantiations.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod dispersion;
pub mod equilibria;
pub mod error;
pub mod interp;
pub mod nonlinear;
pub mod quad;
pub mod reconstruct;
pub mod scalar;
pub mod transport;
pub mod volterra;

pub use error::{Error, Result};
pub use scalar::Real;

pub type TimeGrid = volterra::TimeGrid<f64>;
pub type ModeSeries = volterra::ModeSeries<f64>;
pub type DecayReport = reconstruct::DecayReport<f64>;
pub type CubicSpline = interp::CubicSpline<f64>;
pub type GaussLegendre = quad::GaussLegendre<f64>;
pub type GaussHermite = quad::GaussHermite<f64>;
