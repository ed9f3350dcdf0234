//! Discontinuous Galerkin building blocks for meshes of vertex-mapped pyramids.
//!
//! The central object is the semi-nodal basis of [`refelem::SemiNodalBasis`], which is
//! L2-orthogonal on every vertex-mapped pyramid, so each element's mass matrix is
//! diagonal and inverted by a scaling.

pub mod error;
pub mod orthopoly;
pub mod refelem;
pub mod geometry;
pub mod massops;
pub mod mesh;
pub mod dg;

pub use error::{PyrError, Result};
