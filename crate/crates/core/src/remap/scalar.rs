//! Mapping of plain scalars: arithmetic-mean restriction, copy
//! identification, plane-fit reconstruction and the corrected prolongation.
//!
//! Interface scalars (`Vtheta`) map level by level with the same horizontal
//! weights as cell scalars, so every function here accepts either kind.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{Field, SpaceTag};
use crate::mesh::{ExtrudedMesh, LevelPair};

/// Values per column for a given space on a given mesh.
fn levels_per_col(space: SpaceTag, mesh: &ExtrudedMesh) -> usize {
    match space {
        SpaceTag::Vtheta => mesh.nk() + 1,
        _ => mesh.nk(),
    }
}

fn expect_on(f: &Field, mesh: &Arc<ExtrudedMesh>) -> Result<()> {
    if !Arc::ptr_eq(f.mesh(), mesh) {
        return Err(Error::MeshMismatch);
    }
    if f.space() == SpaceTag::Vu {
        return Err(Error::LayoutMismatch(
            "scalar operators act on cell or interface fields, not Vu".into(),
        ));
    }
    Ok(())
}

/// Coarse column containing fine column `fcol`.
pub(crate) fn parent_col(p: &LevelPair, fcol: usize) -> usize {
    let r = p.nesting.r;
    let (fx, fy) = (fcol % p.fine.nx(), fcol / p.fine.nx());
    (fy / r) * p.coarse.nx() + fx / r
}

/// Arithmetic mean over the children of each coarse cell, level by level.
pub fn restrict_scalar(p: &LevelPair, f: &Field) -> Result<Field> {
    expect_on(f, &p.fine)?;
    let nl = levels_per_col(f.space(), &p.fine);
    let inv = 1.0 / p.nesting.children_per_cell() as f64;
    let fv = f.values();
    let mut vals = vec![0.0; f.space().len_on(&p.coarse)];
    for ccol in 0..p.coarse.ncols() {
        for &fcol in p.nesting.col_children_of(ccol) {
            for k in 0..nl {
                vals[ccol * nl + k] += fv[fcol * nl + k];
            }
        }
    }
    for v in &mut vals {
        *v *= inv;
    }
    Field::from_values(&p.coarse, f.space(), vals)
}

/// Every fine cell copies its parent's value.
pub fn identify_scalar(p: &LevelPair, f: &Field) -> Result<Field> {
    expect_on(f, &p.coarse)?;
    let nl = levels_per_col(f.space(), &p.coarse);
    let fv = f.values();
    let mut vals = vec![0.0; f.space().len_on(&p.fine)];
    for fcol in 0..p.fine.ncols() {
        let ccol = parent_col(p, fcol);
        for k in 0..nl {
            vals[fcol * nl + k] = fv[ccol * nl + k];
        }
    }
    Field::from_values(&p.fine, f.space(), vals)
}

/// Least-squares plane fit over the 3x3 coarse neighbourhood, evaluated at
/// fine centroids. Exact for horizontally linear fields away from the
/// periodic wrap; reproduces constants everywhere.
pub fn reconstruct_scalar(p: &LevelPair, f: &Field) -> Result<Field> {
    expect_on(f, &p.coarse)?;
    let nl = levels_per_col(f.space(), &p.coarse);
    let r = p.nesting.r;
    let (fnx, fny) = (p.fine.nx(), p.fine.ny());
    let (cnx, cny) = (p.coarse.nx(), p.coarse.ny());
    let fv = f.values();
    let mut vals = vec![0.0; f.space().len_on(&p.fine)];
    for fy in 0..fny {
        for fx in 0..fnx {
            let (cx, cy) = (fx / r, fy / r);
            let c = p.ops.recon.at(fx % r, fy % r);
            let fcol = fy * fnx + fx;
            for dy in -1i64..=1 {
                let ny = (cy as i64 + dy).rem_euclid(cny as i64) as usize;
                for dx in -1i64..=1 {
                    let nx = (cx as i64 + dx).rem_euclid(cnx as i64) as usize;
                    let w = c[((dy + 1) * 3 + (dx + 1)) as usize];
                    let ccol = ny * cnx + nx;
                    for k in 0..nl {
                        vals[fcol * nl + k] += w * fv[ccol * nl + k];
                    }
                }
            }
        }
    }
    Field::from_values(&p.fine, f.space(), vals)
}

/// Reconstruction plus the per-parent correction that makes restriction an
/// exact left inverse: `B[f] = R[f] + I[f - A[R[f]]]`.
pub fn prolong_scalar(p: &LevelPair, f: &Field) -> Result<Field> {
    let rec = reconstruct_scalar(p, f)?;
    let corr = f.sub(&restrict_scalar(p, &rec)?)?;
    rec.add(&identify_scalar(p, &corr)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{flat_pair, rng_for, uniform_field};
    use rand::Rng;

    #[test]
    fn restriction_is_the_child_mean() {
        let pair = flat_pair(4, 4, 2);
        let p = &pair.primary;
        let f = Field::from_fn(&p.fine, SpaceTag::Vrho, |i| (i * i) as f64 * 0.25).unwrap();
        let out = restrict_scalar(p, &f).unwrap();
        // Independent audit on one coarse cell.
        let nl = p.fine.nk();
        let ccol = 3usize;
        for k in 0..nl {
            let mut want = 0.0;
            for &fcol in p.nesting.col_children_of(ccol) {
                want += f.values()[fcol * nl + k];
            }
            want /= 4.0;
            assert!((out.values()[ccol * nl + k] - want).abs() <= 1e-13 * want.abs().max(1.0));
        }
    }

    #[test]
    fn identification_copies_the_parent() {
        let pair = flat_pair(4, 2, 1);
        let p = &pair.primary;
        let f = Field::from_fn(&p.coarse, SpaceTag::Vrho, |i| 1.0 + i as f64).unwrap();
        let fine = identify_scalar(p, &f).unwrap();
        for fc in 0..p.fine.ncells() {
            assert_eq!(fine.values()[fc], f.values()[p.nesting.parent_of(fc)]);
        }
    }

    #[test]
    fn reconstruction_hits_linear_fields_away_from_the_wrap() {
        let pair = flat_pair(12, 12, 1);
        let p = &pair.primary;
        let (cdx, cdy) = (p.coarse.dx(), p.coarse.dy());
        let cnx = p.coarse.nx();
        let plane = |x: f64, y: f64| 2.0 + 3.0 * x - 1.5 * y;
        let f = Field::from_fn(&p.coarse, SpaceTag::Vrho, |i| {
            let col = i; // nk = 1
            let (cx, cy) = (col % cnx, col / cnx);
            plane((cx as f64 + 0.5) * cdx, (cy as f64 + 0.5) * cdy)
        })
        .unwrap();
        let rec = reconstruct_scalar(p, &f).unwrap();
        let (fdx, fdy) = (p.fine.dx(), p.fine.dy());
        let fnx = p.fine.nx();
        for fy in 2..p.fine.ny() - 2 {
            for fx in 2..fnx - 2 {
                let want = plane((fx as f64 + 0.5) * fdx, (fy as f64 + 0.5) * fdy);
                let got = rec.values()[fy * fnx + fx];
                assert!((got - want).abs() <= 1e-12, "({fx},{fy}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn prolongation_is_a_right_inverse_of_restriction() {
        let pair = flat_pair(8, 8, 2);
        let p = &pair.primary;
        let mut rng = rng_for(11);
        for space in [SpaceTag::Vrho, SpaceTag::Vtheta] {
            let f = uniform_field(&p.coarse, space, -1.0, 1.0, &mut rng);
            let round = restrict_scalar(p, &prolong_scalar(p, &f).unwrap()).unwrap();
            assert!(round.linf_diff(&f).unwrap() <= 1e-14);
        }
    }

    #[test]
    fn interface_fields_map_level_by_level() {
        let pair = flat_pair(4, 4, 3);
        let p = &pair.primary;
        let nl = p.fine.nk() + 1;
        // A field constant per level must stay constant per level.
        let mut rng = rng_for(7);
        let per_level: Vec<f64> = (0..nl).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let f = Field::from_fn(&p.fine, SpaceTag::Vtheta, |i| per_level[i % nl]).unwrap();
        let out = restrict_scalar(p, &f).unwrap();
        for (i, v) in out.values().iter().enumerate() {
            assert!((v - per_level[i % nl]).abs() <= 1e-14);
        }
    }

    #[test]
    fn face_fields_are_rejected() {
        let pair = flat_pair(4, 4, 1);
        let p = &pair.primary;
        let u = Field::zeros(&p.fine, SpaceTag::Vu).unwrap();
        assert!(matches!(restrict_scalar(p, &u), Err(Error::LayoutMismatch(_))));
    }

    #[test]
    fn fields_on_the_wrong_mesh_are_rejected() {
        let pair = flat_pair(4, 4, 1);
        let p = &pair.primary;
        let f = Field::zeros(&p.coarse, SpaceTag::Vrho).unwrap();
        assert!(matches!(restrict_scalar(p, &f), Err(Error::MeshMismatch)));
    }
}
