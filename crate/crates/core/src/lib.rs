//! Numerical experiments with geodesic flows of warped products `R x_f T^n`.
//!
//! The crate computes curvature, geodesics with a parallel perpendicular
//! frame, Jacobi fields, Green stable and unstable solutions and Riccati
//! functions, and checks an averaged-curvature criterion for hyperbolicity of
//! the geodesic flow on sampled unit vectors.

pub mod anosov_criterion;
pub mod cli_runner;
pub mod error;
pub mod geodesic_flow;
pub mod jacobi_fields;
pub mod scenarios;
pub mod warped_geometry;

pub use error::{Error, Result};
