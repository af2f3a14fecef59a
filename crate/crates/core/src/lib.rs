//! Finite-element transcription of constrained optimal control problems,
//! solved as a single unconstrained penalty-barrier minimization.

// `!(a <= b)` is used on purpose so that NaN fails checks; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod benchmarks;
pub mod cli;
pub mod error;
pub mod fespace;
pub mod lifted;
pub mod linalg;
pub mod mesh;
pub mod ocp;
pub mod polybasis;
pub mod quadrature;
pub mod scalar;
pub mod solver;
pub mod sparse;
pub mod study;

pub use error::{Error, Result};
pub use fespace::FeSpace;
pub use mesh::{merge_meshes, Interval, MergedMesh, Mesh};
pub use ocp::{MethodParams, OcpProblem, ProblemDims};
pub use quadrature::{compose_rule, GlobalRule, UnitRule};
pub use scalar::Real;

pub type Mesh64 = Mesh<f64>;
pub type MergedMesh64 = MergedMesh<f64>;
pub type FeSpace64 = FeSpace<f64>;
pub type GlobalRule64 = GlobalRule<f64>;
pub type MethodParams64 = MethodParams<f64>;
pub type Mesh32 = Mesh<f32>;
pub type FeSpace32 = FeSpace<f32>;
