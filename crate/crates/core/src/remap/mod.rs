//! Inter-mesh mapping operators for one nested pair.
//!
//! Three families share a common shape: a restriction `A` (fine to coarse), an
//! identification `I` (coarse to fine, constant within each parent cell), and
//! a prolongation `B = R + I[f - A[R]]` built from a linear reconstruction
//! `R`. The correction term makes every `B` a right inverse of its `A`
//! regardless of mesh geometry.
//!
//! * scalars: `A` is the arithmetic child mean, `I` a plain copy;
//! * densities: `A` and `I` weight by cell volumes so the dry mass inside
//!   each coarse cell is invariant, even where fine volumes do not tile the
//!   coarse volume;
//! * winds: fluxes through coarse faces are preserved, interior fine faces
//!   interpolate linearly between opposite parent faces.
//!
//! Moisture mixing ratios live on column interfaces; they map through the
//! vertically shifted twin meshes (`shift_*`) as densities so column moist
//! mass is well defined, with a blending factor guarding against negative
//! values on the way back ([`MoistureMapper`]).

pub mod weights;

mod density;
mod moisture;
mod scalar;
mod shift;
mod wind;

pub use density::{identify_density, prolong_density, restrict_density};
pub use moisture::{
    blend_with_lambda, compute_lambda, shifted_moist_mass, LambdaReport, MoistureMapper,
};
pub use scalar::{identify_scalar, prolong_scalar, reconstruct_scalar, restrict_scalar};
pub use shift::{shift_density, shift_mixing_ratio, unshift_mixing_ratio, UnshiftMode};
pub use wind::{prolong_wind, restrict_wind};
