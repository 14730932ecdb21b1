//! Transfers between a primary mesh and its vertically shifted twin.
//!
//! The twin's layers bisect the primary layers, so interface quantities of
//! the primary mesh sit at cell centres of the twin. Densities move with
//! volume weights that keep every column's mass identical on both meshes;
//! mixing ratios move by pointwise assignment with two-point averages at the
//! boundaries, and return by linear extrapolation there.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{Field, SpaceTag};
use crate::mesh::ExtrudedMesh;

/// Boundary handling when mapping a shifted cell field back to interfaces.
///
/// The two boundary interface values come from linear extrapolation, which
/// can undershoot zero. Bona fide mixing-ratio fields clip there; increment
/// fields must not, or the map would stop being linear and mass-neutral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnshiftMode {
    ClipNegative,
    Linear,
}

/// `shifted` must be the vertically shifted twin of `primary`.
fn expect_twins(primary: &ExtrudedMesh, shifted: &ExtrudedMesh) -> Result<()> {
    if primary.shifted
        || !shifted.shifted
        || primary.nx() != shifted.nx()
        || primary.ny() != shifted.ny()
        || primary.nk() + 1 != shifted.nk()
    {
        return Err(Error::LayoutMismatch(
            "expected a primary mesh and its vertically shifted twin".into(),
        ));
    }
    Ok(())
}

/// Map a cell density onto the shifted twin.
///
/// Each shifted cell takes volume-weighted halves of the primary cells it
/// overlaps (one half-cell at each column boundary), so the column mass
/// `sum rho * V` is reproduced exactly for any orography.
pub fn shift_density(rho: &Field, shifted_mesh: &Arc<ExtrudedMesh>) -> Result<Field> {
    if rho.space() != SpaceTag::Vrho {
        return Err(Error::LayoutMismatch(format!(
            "shift_density needs Vrho, got {}",
            rho.space().name()
        )));
    }
    let primary = rho.mesh();
    expect_twins(primary, shifted_mesh)?;
    let nk = primary.nk();
    let rv = rho.values();
    let pv = primary.cell_volumes();
    let sv = shifted_mesh.cell_volumes();
    let mut vals = vec![0.0; shifted_mesh.ncells()];
    for col in 0..primary.ncols() {
        let p = col * nk;
        let s = col * (nk + 1);
        for k in 0..=nk {
            let mass2 = if k == 0 {
                rv[p] * pv[p]
            } else if k == nk {
                rv[p + nk - 1] * pv[p + nk - 1]
            } else {
                rv[p + k - 1] * pv[p + k - 1] + rv[p + k] * pv[p + k]
            };
            vals[s + k] = mass2 / (2.0 * sv[s + k]);
        }
    }
    Field::from_values(shifted_mesh, SpaceTag::VrhoShifted, vals)
}

/// Map an interface mixing ratio onto the shifted twin: interior levels are
/// copied, the boundary cells take the two-point average.
pub fn shift_mixing_ratio(m: &Field, shifted_mesh: &Arc<ExtrudedMesh>) -> Result<Field> {
    if m.space() != SpaceTag::Vtheta {
        return Err(Error::LayoutMismatch(format!(
            "shift_mixing_ratio needs Vtheta, got {}",
            m.space().name()
        )));
    }
    let primary = m.mesh();
    expect_twins(primary, shifted_mesh)?;
    let nk = primary.nk();
    let mv = m.values();
    let mut vals = vec![0.0; shifted_mesh.ncells()];
    for col in 0..primary.ncols() {
        let base = col * (nk + 1);
        for k in 0..=nk {
            vals[base + k] = if k == 0 {
                0.5 * (mv[base] + mv[base + 1])
            } else if k == nk {
                0.5 * (mv[base + nk - 1] + mv[base + nk])
            } else {
                mv[base + k]
            };
        }
    }
    Field::from_values(shifted_mesh, SpaceTag::VrhoShifted, vals)
}

/// Map a shifted cell field back to interfaces: interior levels are copied,
/// boundary interfaces extrapolate linearly from the nearest two shifted
/// values, clipped at zero in [`UnshiftMode::ClipNegative`].
pub fn unshift_mixing_ratio(
    mt: &Field,
    primary_mesh: &Arc<ExtrudedMesh>,
    mode: UnshiftMode,
) -> Result<Field> {
    if mt.space() != SpaceTag::VrhoShifted {
        return Err(Error::LayoutMismatch(format!(
            "unshift_mixing_ratio needs VrhoShifted, got {}",
            mt.space().name()
        )));
    }
    expect_twins(primary_mesh, mt.mesh())?;
    let nk = primary_mesh.nk();
    let sv = mt.values();
    let clip = |v: f64| match mode {
        UnshiftMode::ClipNegative => v.max(0.0),
        UnshiftMode::Linear => v,
    };
    let mut vals = vec![0.0; primary_mesh.ncols() * (nk + 1)];
    for col in 0..primary_mesh.ncols() {
        let base = col * (nk + 1);
        for k in 0..=nk {
            // Interior levels are clipped too: round-off can hand this map
            // inputs a hair below zero, and clip mode promises a nonnegative
            // result everywhere, not only where the extrapolation undershoots.
            vals[base + k] = if k == 0 {
                clip(2.0 * sv[base] - sv[base + 1])
            } else if k == nk {
                clip(2.0 * sv[base + nk] - sv[base + nk - 1])
            } else {
                clip(sv[base + k])
            };
        }
    }
    Field::from_values(primary_mesh, SpaceTag::Vtheta, vals)
}
