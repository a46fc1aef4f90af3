//! Finite element solver for the three-field Biot consolidation model.
//!
//! Displacement, total pressure and fluid pressure are discretized with
//! continuous Lagrange elements (`P_k`, `P_{k-1}`, `P_l`) on uniform triangle
//! meshes of the unit square and advanced in time with a fully coupled
//! backward Euler scheme ([`schemes::Method::Method1`]) or a variant using
//! Crank-Nicolson for the flow equation ([`schemes::Method::Method2`]).

pub mod analysis;
pub mod assembly;
pub mod elements;
pub mod linsolve;
pub mod mesh;
pub mod mms;
pub mod schemes;
pub mod spaces;

pub use analysis::{compute_errors, convergence_order, spatial_study, temporal_study, ConvergenceReport, ErrorRecord};
pub use assembly::PhysicalParams;
pub use mesh::{unit_square_mesh, BoundaryRoles, Mesh};
pub use mms::{example1, example2, ManufacturedCase};
pub use schemes::{Discretization, Method, SchemeConfig, State};
