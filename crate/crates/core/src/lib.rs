//! Localized orthogonal decomposition (LOD) for 2D linear elasticity with
//! rough, piecewise constant Lamé coefficients on the unit square.
//!
//! The crate covers uniform nested triangulations ([`mesh`]), vector P1
//! assembly ([`fem`]), the quasi-interpolation `I_H` ([`interpolation`]),
//! localized correctors and the multiscale Galerkin solve ([`lod`]), the
//! benchmark inputs ([`problems`]) and the convergence studies ([`experiment`]).

pub mod error;
pub mod experiment;
pub mod fem;
pub mod interpolation;
pub mod lod;
pub mod mesh;
pub mod problems;
pub mod sparse;

pub use error::{LodError, Result};
pub use fem::{BodyForce, CoefficientField, DofMap, ProblemSpec};
pub use interpolation::InterpolationOperator;
pub use lod::{CorrectorSet, GfemSolution, LodContext};
pub use mesh::{BoundaryKind, BoundarySpec, Mesh, Patch};
