//! Precomputed weights for the mapping operators of one nested level pair.
//!
//! Restriction and identification of densities use volume ratios; wind
//! transfer uses face-area ratios. Reconstruction uses a least-squares plane
//! fit over the 3x3 coarse neighbourhood, evaluated at fine-cell centroids;
//! on a uniform horizontal grid those coefficients depend only on the
//! position of a fine cell inside its parent, so they reduce to pure numbers.

use crate::mesh::{ExtrudedMesh, FaceRelation, NestingMap};

/// Plane-fit coefficients per fine subcell position.
///
/// Stencil neighbours are ordered `l = (dy + 1) * 3 + (dx + 1)` for offsets
/// `dx, dy` in `{-1, 0, 1}`. Coefficients sum to one, so constants are
/// reproduced by construction, and the fit is exact for linear fields.
#[derive(Debug)]
pub struct ReconstructionWeights {
    r: usize,
    coeffs: Vec<[f64; 9]>,
}

impl ReconstructionWeights {
    pub fn new(r: usize) -> Self {
        let mut coeffs = Vec::with_capacity(r * r);
        for gy in 0..r {
            for gx in 0..r {
                // Fine centroid offset from the parent centroid in units of
                // the coarse spacing.
                let zx = (2.0 * gx as f64 + 1.0 - r as f64) / (2.0 * r as f64);
                let zy = (2.0 * gy as f64 + 1.0 - r as f64) / (2.0 * r as f64);
                let mut c = [0.0; 9];
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let l = ((dy + 1) * 3 + (dx + 1)) as usize;
                        c[l] = 1.0 / 9.0 + dx as f64 * zx / 6.0 + dy as f64 * zy / 6.0;
                    }
                }
                coeffs.push(c);
            }
        }
        Self { r, coeffs }
    }

    /// Coefficients for the fine cell at offset `(gx, gy)` in its parent.
    pub fn at(&self, gx: usize, gy: usize) -> &[f64; 9] {
        &self.coeffs[gy * self.r + gx]
    }
}

/// Weight tables for one fine/coarse pair (primary or shifted).
#[derive(Debug)]
pub struct PairOperators {
    pub recon: ReconstructionWeights,
    /// Per fine cell: its volume over the parent volume (restriction).
    pub restrict_cell_w: Vec<f64>,
    /// Per fine cell: parent volume over `N` times its volume (identification).
    pub identify_cell_w: Vec<f64>,
    /// Per fine face: its area over the coincident coarse face area;
    /// zero for interior faces.
    pub restrict_face_w: Vec<f64>,
    /// Per fine face: coarse area over (count * fine area); zero for
    /// interior faces.
    pub prolong_face_w: Vec<f64>,
}

impl PairOperators {
    pub fn build(fine: &ExtrudedMesh, coarse: &ExtrudedMesh, nesting: &NestingMap) -> Self {
        let n = nesting.children_per_cell() as f64;
        let mut restrict_cell_w = vec![0.0; fine.ncells()];
        let mut identify_cell_w = vec![0.0; fine.ncells()];
        for cc in 0..coarse.ncells() {
            let cv = coarse.cell_volumes()[cc];
            for &fc in nesting.children_of(cc) {
                let fv = fine.cell_volumes()[fc];
                restrict_cell_w[fc] = fv / cv;
                identify_cell_w[fc] = cv / (n * fv);
            }
        }

        let mut restrict_face_w = vec![0.0; fine.n_flux_dofs()];
        let mut prolong_face_w = vec![0.0; fine.n_flux_dofs()];
        for cf in 0..nesting.n_coarse_faces() {
            let ca = coarse.face_areas()[cf];
            let kids = nesting.faces_of(cf);
            let count = kids.len() as f64;
            for &ff in kids {
                let fa = fine.face_areas()[ff];
                restrict_face_w[ff] = fa / ca;
                prolong_face_w[ff] = ca / (count * fa);
            }
        }
        debug_assert!(fine
            .face_areas()
            .iter()
            .enumerate()
            .all(|(f, _)| match nesting.face_relation(f) {
                FaceRelation::Exterior { .. } => restrict_face_w[f] > 0.0,
                FaceRelation::Interior { .. } => restrict_face_w[f] == 0.0,
            }));

        Self {
            recon: ReconstructionWeights::new(nesting.r),
            restrict_cell_w,
            identify_cell_w,
            restrict_face_w,
            prolong_face_w,
        }
    }

    /// Fault-injection hook for validation runs: scales the cell restriction
    /// weights so conservation audits must detect the corruption.
    pub fn corrupt_restriction_weights(&mut self, factor: f64) {
        for w in &mut self.restrict_cell_w {
            *w *= factor;
        }
    }
}
