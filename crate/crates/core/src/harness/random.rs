//! Deterministic fixtures and seeded random fields for the property suite,
//! the benches and the unit tests.
//!
//! The smooth draws keep the exactness-sensitive paths clip-free: mixing
//! ratios stay within a factor of two of their floor, and dry densities are
//! constant within each column, which makes the shifted-mesh boundary
//! extrapolations provably nonnegative on any orography. The adversarial
//! draw deliberately breaks those guarantees to exercise the positivity
//! machinery.
//!
//! All builders panic on invalid sizes; they exist for desk-scale setups
//! whose parameters are chosen by the caller, not parsed from input.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fields::{Field, SpaceTag};
use crate::mesh::{ExtrudedMesh, HorizontalMesh, NestedMeshPair, Orography, VerticalGrid};

/// Small fast PRNG with reproducible, platform-independent streams.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Flat-floor nested pair over a 1 km box, refinement 2.
pub fn flat_pair(nx: usize, ny: usize, nk: usize) -> NestedMeshPair {
    let h = HorizontalMesh::new(nx, ny, 1000.0, 1000.0).expect("fixture sizes are valid");
    let v = VerticalGrid::uniform(nk, 0.0, 1000.0).expect("fixture grid is valid");
    NestedMeshPair::build(h, v, 2, &Orography::flat()).expect("fixture pair is valid")
}

/// Gentle periodic Gaussian hill, off-centre so no symmetry hides bugs.
pub fn bump_orography(h: &HorizontalMesh, height: f64) -> Orography {
    let (lx, ly) = (h.lx, h.ly);
    Orography::from_fn(h, move |x, y| {
        let rx = {
            let d = (x / lx - 0.45).abs();
            d.min(1.0 - d)
        };
        let ry = {
            let d = (y / ly - 0.45).abs();
            d.min(1.0 - d)
        };
        height * (-(rx * rx + ry * ry) / 0.02).exp()
    })
}

/// Nested pair with a 200 m hill under a 1 km lid.
pub fn bump_pair(nx: usize, ny: usize, nk: usize) -> NestedMeshPair {
    let h = HorizontalMesh::new(nx, ny, 1000.0, 1000.0).expect("fixture sizes are valid");
    let v = VerticalGrid::uniform(nk, 0.0, 1000.0).expect("fixture grid is valid");
    let orog = bump_orography(&h, 200.0);
    NestedMeshPair::build(h, v, 2, &orog).expect("fixture pair is valid")
}

/// Independent uniform draw per dof.
pub fn uniform_field(
    mesh: &Arc<ExtrudedMesh>,
    space: SpaceTag,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> Field {
    Field::from_fn(mesh, space, |_| rng.gen_range(lo..hi)).expect("space fits the mesh")
}

/// Random face field with zero flux through ground and lid, the only
/// boundaries of a horizontally periodic mesh.
pub fn wind_with_closed_boundaries(
    mesh: &Arc<ExtrudedMesh>,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> Field {
    let mut u = uniform_field(mesh, SpaceTag::Vu, lo, hi, rng);
    let nk = mesh.nk();
    for iy in 0..mesh.ny() {
        for ix in 0..mesh.nx() {
            u.values_mut()[mesh.z_face_id(ix, iy, 0)] = 0.0;
            u.values_mut()[mesh.z_face_id(ix, iy, nk)] = 0.0;
        }
    }
    u
}

/// Random dry density, constant within each column. Level-independent layer
/// compression then guarantees the shifted-mesh boundary extrapolations stay
/// positive, so clip-free identities hold even over orography.
pub fn column_density(
    mesh: &Arc<ExtrudedMesh>,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> Field {
    let per_col: Vec<f64> = (0..mesh.ncols()).map(|_| rng.gen_range(lo..hi)).collect();
    let space = if mesh.shifted { SpaceTag::VrhoShifted } else { SpaceTag::Vrho };
    let nk = mesh.nk();
    Field::from_fn(mesh, space, |dof| per_col[dof / nk]).expect("cell space fits the mesh")
}

/// Interface-level mixing ratio whose range stays within a factor of two of
/// a positive floor, which keeps every boundary extrapolation nonnegative.
pub fn safe_mixing_ratio(mesh: &Arc<ExtrudedMesh>, rng: &mut ChaCha8Rng) -> Field {
    uniform_field(mesh, SpaceTag::Vtheta, 0.5, 1.0, rng)
}

/// Nonnegative interface-level field built to stress the positivity blend:
/// each column draws one of four shapes, from smooth plateaus through exact
/// zeros to steep zero-or-one fronts and near-zero noise floors.
pub fn adversarial_mixing_ratio(mesh: &Arc<ExtrudedMesh>, rng: &mut ChaCha8Rng) -> Field {
    let nl = mesh.nk() + 1;
    let styles: Vec<u8> = (0..mesh.ncols()).map(|_| rng.gen_range(0..4u8)).collect();
    let mut vals = Vec::with_capacity(mesh.ncols() * nl);
    for col in 0..mesh.ncols() {
        for _k in 0..nl {
            vals.push(match styles[col] {
                0 => rng.gen_range(0.2..1.0),
                1 => {
                    if rng.gen_bool(0.5) {
                        0.0
                    } else {
                        rng.gen_range(0.5..1.0)
                    }
                }
                2 => rng.gen_range(0.0..1e-12),
                _ => {
                    if rng.gen_bool(0.5) {
                        0.0
                    } else {
                        1.0
                    }
                }
            });
        }
    }
    Field::from_values(mesh, SpaceTag::Vtheta, vals).expect("interface space fits the mesh")
}
