//! 2D incompressible variable-viscosity Stokes flow on a staggered grid.
//!
//! The solver couples a fixed Eulerian grid with Lagrangian markers: material
//! properties live on markers, are interpolated to the grid before each
//! solve, and the solved velocity field advects the markers. The Stokes
//! saddle-point system is solved by an inexact Uzawa iteration whose velocity
//! update is a matrix-free geometric multigrid V-cycle, with optional GCR or
//! Anderson acceleration on the outer fixed point. A rank-decomposed
//! execution mode runs marker advection over an in-process message transport
//! with the same wire protocol a network transport would use.

pub mod accel;
pub mod config;
pub mod dist;
pub mod error;
pub mod field;
pub mod grid;
pub mod markers;
pub mod multigrid;
pub mod runner;
pub mod scenario;
pub mod snapshot;
pub mod stokes;
pub mod uzawa;

pub use error::{Error, Result};
pub use field::Field2;
pub use grid::{
    apply_velocity_bc, make_uniform_grid, unit_scaling, BcKind, BcSpec, FieldSet, GridGeometry2D,
    ScalingSet, StaggerRole,
};
