//! Numerics for uniformly rotating vortex patches of the 3D quasi-geostrophic
//! model bifurcating from revolution shapes.

pub mod error;
pub mod kernel;
pub mod linop;
pub mod nonlinear;
pub mod profile;
pub mod quadrature;
pub mod spectral;
pub mod specfun;

pub use error::{Error, Result};
