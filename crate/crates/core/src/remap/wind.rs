//! Flux-conserving mapping of face-normal wind components.
//!
//! A coarse face coincides with a set of exterior fine faces; restriction
//! area-averages their normal components so the integrated flux through the
//! coarse face is unchanged. Prolongation gives exterior faces the matching
//! area-weighted share and fills interior fine faces by linear interpolation
//! between the two parent faces on the same axis, which keeps restriction an
//! exact inverse because interior faces never enter the restriction.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{Field, SpaceTag};
use crate::mesh::{ExtrudedMesh, FaceRelation, LevelPair};

fn expect_flux_field(f: &Field, mesh: &Arc<ExtrudedMesh>) -> Result<()> {
    if !Arc::ptr_eq(f.mesh(), mesh) {
        return Err(Error::MeshMismatch);
    }
    if f.space() != SpaceTag::Vu {
        return Err(Error::LayoutMismatch(format!(
            "wind operators need Vu, got {}",
            f.space().name()
        )));
    }
    Ok(())
}

/// Area-weighted restriction over the coincident fine faces of each coarse
/// face; preserves the flux integral exactly for any face areas.
pub fn restrict_wind(p: &LevelPair, u: &Field) -> Result<Field> {
    expect_flux_field(u, &p.fine)?;
    let uv = u.values();
    let w = &p.ops.restrict_face_w;
    let mut vals = vec![0.0; p.coarse.n_flux_dofs()];
    for (cf, v) in vals.iter_mut().enumerate() {
        for &ff in p.nesting.faces_of(cf) {
            *v += uv[ff] * w[ff];
        }
    }
    Field::from_values(&p.coarse, SpaceTag::Vu, vals)
}

/// Exterior fine faces take the parent's flux split by area; interior faces
/// interpolate between the opposite parent faces at their fractional
/// position.
pub fn prolong_wind(p: &LevelPair, u: &Field) -> Result<Field> {
    expect_flux_field(u, &p.coarse)?;
    let uv = u.values();
    let w = &p.ops.prolong_face_w;
    let mut vals = vec![0.0; p.fine.n_flux_dofs()];
    for (ff, v) in vals.iter_mut().enumerate() {
        *v = match p.nesting.face_relation(ff) {
            FaceRelation::Exterior { coarse_face } => uv[coarse_face] * w[ff],
            FaceRelation::Interior { lo, hi, alpha } => {
                (1.0 - alpha) * uv[lo] + alpha * uv[hi]
            }
        };
    }
    Field::from_values(&p.fine, SpaceTag::Vu, vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{bump_pair, flat_pair, rng_for, uniform_field};

    #[test]
    fn kernel_example_equal_area_mean() {
        // Two coincident fine faces with values {1, 3} and equal areas
        // restrict to 2; the flux integral is identical by construction.
        let pair = flat_pair(4, 4, 1);
        let p = &pair.primary;
        let mut u = Field::zeros(&p.fine, SpaceTag::Vu).unwrap();
        let cf = p.coarse.x_face_id(1, 0, 0);
        let kids = p.nesting.faces_of(cf).to_vec();
        assert_eq!(kids.len(), 2);
        u.values_mut()[kids[0]] = 1.0;
        u.values_mut()[kids[1]] = 3.0;
        let coarse = restrict_wind(p, &u).unwrap();
        assert!((coarse.values()[cf] - 2.0).abs() <= 1e-15);
        let fine_flux: f64 = kids.iter().map(|&f| u.values()[f] * p.fine.face_areas()[f]).sum();
        assert!((coarse.values()[cf] * p.coarse.face_areas()[cf] - fine_flux).abs() <= 1e-13);
    }

    #[test]
    fn interior_faces_interpolate_between_parent_faces() {
        // Coarse faces {0, 4} around one parent cell: the midpoint interior
        // face of an r=2 refinement reads 2.
        let pair = flat_pair(4, 4, 1);
        let p = &pair.primary;
        let mut u = Field::zeros(&p.coarse, SpaceTag::Vu).unwrap();
        let lo = p.coarse.x_face_id(0, 0, 0);
        let hi = p.coarse.x_face_id(1, 0, 0);
        u.values_mut()[lo] = 0.0;
        u.values_mut()[hi] = 4.0;
        let fine = prolong_wind(p, &u).unwrap();
        let mid = p.fine.x_face_id(1, 0, 0);
        match p.nesting.face_relation(mid) {
            FaceRelation::Interior { alpha, .. } => assert!((alpha - 0.5).abs() <= 1e-15),
            _ => panic!("face (1,0) must be interior for r=2"),
        }
        assert!((fine.values()[mid] - 2.0).abs() <= 1e-15);
    }

    #[test]
    fn uniform_wind_prolongs_uniformly_on_flat_meshes() {
        let pair = flat_pair(8, 8, 2);
        let p = &pair.primary;
        let u = Field::constant(&p.coarse, SpaceTag::Vu, 3.25).unwrap();
        let fine = prolong_wind(p, &u).unwrap();
        assert!((fine.min() - 3.25).abs() <= 1e-14 && (fine.max() - 3.25).abs() <= 1e-14);
    }

    #[test]
    fn restriction_inverts_prolongation_on_any_orography() {
        for pair in [flat_pair(8, 8, 2), bump_pair(8, 8, 2)] {
            let p = &pair.primary;
            let mut rng = rng_for(31);
            let u = uniform_field(&p.coarse, SpaceTag::Vu, -1.0, 1.0, &mut rng);
            let round = restrict_wind(p, &prolong_wind(p, &u).unwrap()).unwrap();
            assert!(round.linf_diff(&u).unwrap() <= 1e-14);
        }
    }

    #[test]
    fn coarse_face_flux_is_preserved_by_restriction() {
        for pair in [flat_pair(8, 8, 2), bump_pair(8, 8, 2)] {
            let p = &pair.primary;
            let mut rng = rng_for(32);
            let u = uniform_field(&p.fine, SpaceTag::Vu, -1.0, 1.0, &mut rng);
            let coarse = restrict_wind(p, &u).unwrap();
            for cf in 0..p.coarse.n_flux_dofs() {
                let want: f64 = p
                    .nesting
                    .faces_of(cf)
                    .iter()
                    .map(|&ff| u.values()[ff] * p.fine.face_areas()[ff])
                    .sum();
                let got = coarse.values()[cf] * p.coarse.face_areas()[cf];
                assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn cell_fields_are_rejected() {
        let pair = flat_pair(4, 4, 1);
        let f = Field::zeros(&pair.primary.fine, SpaceTag::Vrho).unwrap();
        assert!(matches!(restrict_wind(&pair.primary, &f), Err(Error::LayoutMismatch(_))));
    }
}
