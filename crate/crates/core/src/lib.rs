//! Level-set symmetrization of principal eigenvalue problems for
//! `−div(A∇u) + v·∇u + V u` with Dirichlet conditions on planar domains.

pub mod error;
pub mod fields;
pub mod geometry;
pub mod elliptic2d;
pub mod radial1d;
pub mod rearrange;
pub mod distribution;
pub mod extremal;
pub mod asymptotics;
pub mod harness;

pub use error::{Error, Result};
