//! Mass-conserving mapping of cell densities.
//!
//! Restriction weights each child by its share of the parent volume and
//! identification spreads a coarse value so the represented mass is the
//! parent's mass. Both identities hold per coarse cell whether or not the
//! fine volumes tile the coarse volume, which is what makes them safe on
//! terrain-following meshes; the price is that a constant density is only
//! preserved where the volumes do tile (flat orography).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{Field, SpaceTag};
use crate::mesh::{ExtrudedMesh, LevelPair};
use crate::remap::scalar::reconstruct_scalar;

/// The cell space carried by `mesh` (primary or shifted).
fn cell_space(mesh: &ExtrudedMesh) -> SpaceTag {
    if mesh.shifted {
        SpaceTag::VrhoShifted
    } else {
        SpaceTag::Vrho
    }
}

fn expect_cell_field(f: &Field, mesh: &Arc<ExtrudedMesh>) -> Result<()> {
    if !Arc::ptr_eq(f.mesh(), mesh) {
        return Err(Error::MeshMismatch);
    }
    let want = cell_space(mesh);
    if f.space() != want {
        return Err(Error::LayoutMismatch(format!(
            "density operators need {}, got {}",
            want.name(),
            f.space().name()
        )));
    }
    Ok(())
}

/// Volume-weighted restriction: the coarse cell carries the summed mass of
/// its children divided by its own volume.
pub fn restrict_density(p: &LevelPair, f: &Field) -> Result<Field> {
    expect_cell_field(f, &p.fine)?;
    let fv = f.values();
    let w = &p.ops.restrict_cell_w;
    let mut vals = vec![0.0; p.coarse.ncells()];
    for fc in 0..p.fine.ncells() {
        vals[p.nesting.parent_of(fc)] += fv[fc] * w[fc];
    }
    Field::from_values(&p.coarse, f.space(), vals)
}

/// Mass-conserving identification: each child gets an equal share of the
/// parent mass, expressed as a density over its own volume.
pub fn identify_density(p: &LevelPair, f: &Field) -> Result<Field> {
    expect_cell_field(f, &p.coarse)?;
    let fv = f.values();
    let w = &p.ops.identify_cell_w;
    let mut vals = vec![0.0; p.fine.ncells()];
    for fc in 0..p.fine.ncells() {
        vals[fc] = fv[p.nesting.parent_of(fc)] * w[fc];
    }
    Field::from_values(&p.fine, f.space(), vals)
}

/// Prolongation with the mass-conserving correction: reconstruction plus
/// `I[f - A[R[f]]]`, so restriction recovers `f` and every coarse cell's mass
/// is reproduced exactly.
pub fn prolong_density(p: &LevelPair, f: &Field) -> Result<Field> {
    expect_cell_field(f, &p.coarse)?;
    let rec = reconstruct_scalar(p, f)?;
    let corr = f.sub(&restrict_density(p, &rec)?)?;
    rec.add(&identify_density(p, &corr)?)
}
