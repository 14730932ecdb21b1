//! Mapping of staggered atmospheric fields between horizontally nested meshes.
//!
//! A fine extruded quadrilateral mesh and a coarse mesh related to it by an
//! integer refinement factor exchange fields through four families of
//! operators:
//!
//! * restriction (fine to coarse averages),
//! * prolongation (coarse to fine, reversible under restriction),
//! * identification (copying a coarse value into its children),
//! * reconstruction (linear estimates of fine values from coarse neighbours).
//!
//! Density variants weight by cell volume so dry mass is conserved cell by
//! cell; wind variants weight by face area so the integrated flux through
//! every coarse face is conserved; mixing-ratio variants route moisture
//! through a vertically shifted density space so moist mass is conserved and
//! a per-cell blending factor keeps prolonged moisture nonnegative.
//!
//! On top of the operators sit a coarse-mesh tracer transport scheme that is
//! conservative and consistent against the fine-mesh dry-density step, and a
//! physics coupling layer that maps prognostic fields to a physics mesh and
//! increments back.
//!
//! The `harness` module drives desk-scale experiments (used by the
//! `nestfield` binary) and a self-checking property suite.

pub mod error;
pub mod fields;
pub mod harness;
pub mod mesh;
pub mod physics;
pub mod remap;
pub mod transport;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use fields::{Field, SpaceTag};
pub use mesh::{
    ExtrudedMesh, HorizontalMesh, LevelPair, NestedMeshPair, NestingMap, Orography, VerticalGrid,
};
pub use physics::{MoistState, PhysicsParams, PhysicsScheme};
pub use remap::MoistureMapper;
pub use transport::{FluxScheme, TransportConfig, TransportState};
