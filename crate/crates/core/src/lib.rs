// Index loops follow the tensor index notation of the assembled forms;
// negated float comparisons are deliberate NaN-rejecting guards.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Dynamics of two linearly elastic bodies bonded by a thin, heavy,
//! nonlinear Kelvin-Voigt viscoelastic layer.
//!
//! The crate provides two solvers and the machinery to compare them:
//!
//! * a positive-thickness model on a layer-resolving bulk mesh, stepped
//!   implicitly through the resolvent of the governing monotone operator
//!   (each backward-Euler step is a convex minimization),
//! * a bulk-surface limit model in which the layer has collapsed onto the
//!   interface but keeps its own displacement/velocity fields on a fixed
//!   reference box, coupled to the bulk through shared interface traces,
//! * projection operators from the limit state space into each
//!   positive-thickness state space, so trajectories of the two models can
//!   be compared in the thin model's energy norm as the layer degenerates.
//!
//! Meshes are structured tensor grids with multilinear (Q1) vector
//! elements; all assembled operators are sparse and symmetric.

pub mod cg;
pub mod error;
pub mod fem;
pub mod field;
pub mod forms;
pub mod limit;
pub mod linalg;
pub mod material;
pub mod mesh;
pub mod rng;
pub mod sparse;
pub mod thin;
pub mod trotter;

pub use error::{Error, Result};
pub use field::NodalField;
pub use forms::{Forms, LoadPattern, SpaceKind, TimeProfile};
pub use limit::{LimitParams, LimitState, LimitTrajectory};
pub use material::{DissipationSpec, ElasticLaw, RhoStar};
pub use mesh::{DomainConfig, DomainMeshes, PatchSelector, Side, TensorMesh};
pub use thin::{QuintupleParams, ThinState, ThinTrajectory};
pub use trotter::{ProjectionContext, TrotterReport};
