//! Numerical toolkit for multifield continua: bodies whose material elements
//! carry an order parameter valued in a Riemannian manifold.

pub mod engine;
pub mod error;
pub mod interface;
pub mod linear;
pub mod io;
pub mod kinematics;
pub mod manifold;
pub mod mechanics;
pub mod metrics;

pub use error::{Error, Result};
