//! Extruded quadrilateral meshes, their vertically shifted twins, and the
//! nesting relations between a fine mesh and a coarse mesh.
//!
//! The horizontal domain is a doubly periodic rectangle split into `nx * ny`
//! quadrilateral columns. Columns are extruded through `nk` layers whose
//! vertex heights follow the surface through a terrain-following decay
//!
//! ```text
//! z(v, k) = z_k + h_v * (1 - z_k / z_top)
//! ```
//!
//! so layer compression is the same at every level of a vertex column.
//! Volumes and face areas come from closed-form expressions for trilinear
//! hexahedra and bilinear faces: conservation identities downstream must hold
//! to round-off, which rules out approximate quadrature.
//!
//! A nested pair shares vertex positions: every coarse vertex coincides with
//! a fine vertex, and coarse vertex heights are copied from the fine mesh,
//! never re-derived from the surface field. Under orography the fine cells
//! belonging to a coarse cell need not tile its volume exactly; the operators
//! built on top are written so conservation survives that.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::remap::weights::PairOperators;

/// Doubly periodic structured quadrilateral mesh.
#[derive(Debug, Clone)]
pub struct HorizontalMesh {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// Both directions wrap. Only periodic meshes are supported: the
    /// reconstruction stencils assume every cell has a full neighbourhood.
    pub periodic: bool,
    /// Refinement tag: 0 for the finest mesh of a hierarchy, increasing as
    /// meshes coarsen.
    pub level: u32,
}

impl HorizontalMesh {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::MeshBuild("cell counts must be nonzero".into()));
        }
        if !(lx > 0.0) || !(ly > 0.0) {
            return Err(Error::MeshBuild("domain extents must be positive".into()));
        }
        Ok(Self { nx, ny, lx, ly, periodic: true, level: 0 })
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn ncols(&self) -> usize {
        self.nx * self.ny
    }

    pub fn col(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    /// Coarsen by an integer factor, keeping the same physical domain.
    pub fn coarsen(&self, r: usize) -> Result<Self> {
        if r < 2 || self.nx % r != 0 || self.ny % r != 0 {
            return Err(Error::RefinementMismatch { r, nx: self.nx, ny: self.ny });
        }
        Ok(Self {
            nx: self.nx / r,
            ny: self.ny / r,
            lx: self.lx,
            ly: self.ly,
            periodic: self.periodic,
            level: self.level + 1,
        })
    }
}

/// Strictly increasing interface heights shared by every column before the
/// terrain-following adjustment; `z_levels[0]` is the reference surface.
#[derive(Debug, Clone)]
pub struct VerticalGrid {
    pub z_levels: Vec<f64>,
}

impl VerticalGrid {
    pub fn new(z_levels: Vec<f64>) -> Result<Self> {
        if z_levels.len() < 2 {
            return Err(Error::MeshBuild("need at least one layer".into()));
        }
        if !z_levels.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::MeshBuild("interface heights must strictly increase".into()));
        }
        Ok(Self { z_levels })
    }

    pub fn uniform(nk: usize, z_bottom: f64, z_top: f64) -> Result<Self> {
        if nk == 0 {
            return Err(Error::MeshBuild("need at least one layer".into()));
        }
        let dz = (z_top - z_bottom) / nk as f64;
        Self::new((0..=nk).map(|k| z_bottom + dz * k as f64).collect())
    }

    pub fn nk(&self) -> usize {
        self.z_levels.len() - 1
    }

    pub fn z_bottom(&self) -> f64 {
        self.z_levels[0]
    }

    pub fn z_top(&self) -> f64 {
        *self.z_levels.last().unwrap()
    }

    /// Grid of the vertically shifted twin: one interface at each midpoint of
    /// a primary layer, plus the unchanged bottom and top surfaces. A grid
    /// with `nk` layers shifts to one with `nk + 1`.
    pub fn shifted(&self) -> VerticalGrid {
        let z = &self.z_levels;
        let mut out = Vec::with_capacity(z.len() + 1);
        out.push(z[0]);
        for w in z.windows(2) {
            out.push(0.5 * (w[0] + w[1]));
        }
        out.push(*z.last().unwrap());
        VerticalGrid { z_levels: out }
    }
}

/// Surface height sampled at the horizontal vertex columns of the fine mesh.
///
/// The vertex grid of a doubly periodic mesh has exactly one vertex column
/// per cell column, so heights are stored per `(ix, iy)` vertex at
/// `(ix * dx, iy * dy)`.
#[derive(Debug, Clone)]
pub enum Orography {
    Flat,
    Vertex(Vec<f64>),
}

impl Orography {
    pub fn flat() -> Self {
        Orography::Flat
    }

    /// Sample a surface function at the vertex positions of `h`.
    pub fn from_fn(h: &HorizontalMesh, f: impl Fn(f64, f64) -> f64) -> Self {
        let (dx, dy) = (h.dx(), h.dy());
        let mut v = Vec::with_capacity(h.ncols());
        for iy in 0..h.ny {
            for ix in 0..h.nx {
                v.push(f(ix as f64 * dx, iy as f64 * dy));
            }
        }
        Orography::Vertex(v)
    }

    fn height(&self, vcol: usize) -> f64 {
        match self {
            Orography::Flat => 0.0,
            Orography::Vertex(v) => v[vcol],
        }
    }
}

/// Volume of a hexahedral cell over a rectangular footprint whose bottom and
/// top faces are bilinear in (x, y): the integral of a bilinear thickness is
/// the footprint area times the mean of the four corner thicknesses.
pub(crate) fn hex_volume(dx: f64, dy: f64, z_bot: &[f64; 4], z_top: &[f64; 4]) -> f64 {
    let t: f64 = (0..4).map(|c| z_top[c] - z_bot[c]).sum();
    dx * dy * 0.25 * t
}

/// Area of a vertical quadrilateral face with parallel vertical edges of
/// lengths `t0`, `t1` a distance `width` apart.
pub(crate) fn lateral_area(width: f64, t0: f64, t1: f64) -> f64 {
    width * 0.5 * (t0 + t1)
}

/// Magnitude of the vector area of a bilinear horizontal face with corner
/// heights `[z00, z10, z01, z11]` over a `dx * dy` footprint. Exact for the
/// planar faces produced by linear slopes; for a constant normal flow the
/// vector area is exactly what the flux integral samples.
pub(crate) fn zface_area(dx: f64, dy: f64, z: &[f64; 4]) -> f64 {
    let sx = (z[0] + z[2]) - (z[1] + z[3]);
    let sy = (z[0] + z[1]) - (z[2] + z[3]);
    let a = dx * dy;
    (a * a + (0.5 * dy * sx).powi(2) + (0.5 * dx * sy).powi(2)).sqrt()
}

/// Structured extruded mesh with precomputed cell volumes and face areas.
///
/// Degrees of freedom are ordered column-major: for cell quantities the layer
/// index runs fastest within the horizontal column `iy * nx + ix`. Face
/// quantities follow the flux-space layout: all x-normal faces, then all
/// y-normal faces, then all z-normal faces, each block column-major. Lateral
/// faces are periodic and owned by the lower-indexed cell; flux is positive
/// in +x, +y, +z.
#[derive(Debug)]
pub struct ExtrudedMesh {
    pub horizontal: HorizontalMesh,
    pub vertical: VerticalGrid,
    /// True for a vertically shifted twin.
    pub shifted: bool,
    /// Interface heights per vertex column, layout `vcol * (nk + 1) + k`.
    vertex_z: Vec<f64>,
    cell_volume: Vec<f64>,
    /// Face areas in flux-space dof order.
    face_area: Vec<f64>,
}

impl ExtrudedMesh {
    /// Extrude `horizontal` through `vertical`, draping layers over the
    /// surface with the terrain-following decay.
    pub fn build(
        horizontal: HorizontalMesh,
        vertical: VerticalGrid,
        orography: &Orography,
    ) -> Result<Self> {
        if !horizontal.periodic {
            return Err(Error::MeshBuild("only periodic meshes are supported".into()));
        }
        if let Orography::Vertex(v) = orography {
            if v.len() != horizontal.ncols() {
                return Err(Error::MeshBuild(format!(
                    "orography has {} vertex heights, mesh has {} vertex columns",
                    v.len(),
                    horizontal.ncols()
                )));
            }
        }
        let nk = vertical.nk();
        let (z_bot, z_top) = (vertical.z_bottom(), vertical.z_top());
        let depth = z_top - z_bot;
        let mut vertex_z = Vec::with_capacity(horizontal.ncols() * (nk + 1));
        for vcol in 0..horizontal.ncols() {
            let h = orography.height(vcol);
            if !(0.0..depth).contains(&h) {
                return Err(Error::OrographyOutOfRange { h, z_top });
            }
            for k in 0..=nk {
                let z = vertical.z_levels[k];
                vertex_z.push(z + h * (1.0 - (z - z_bot) / depth));
            }
        }
        Ok(Self::from_vertex_heights(horizontal, vertical, vertex_z, false))
    }

    /// Assemble a mesh directly from per-vertex interface heights.
    fn from_vertex_heights(
        horizontal: HorizontalMesh,
        vertical: VerticalGrid,
        vertex_z: Vec<f64>,
        shifted: bool,
    ) -> Self {
        let mut mesh = Self {
            horizontal,
            vertical,
            shifted,
            vertex_z,
            cell_volume: Vec::new(),
            face_area: Vec::new(),
        };
        mesh.compute_geometry();
        mesh
    }

    fn compute_geometry(&mut self) {
        let (nx, ny, nk) = (self.nx(), self.ny(), self.nk());
        let (dx, dy) = (self.dx(), self.dy());

        let mut vol = vec![0.0; self.ncells()];
        for iy in 0..ny {
            for ix in 0..nx {
                let c4 = self.corner_cols(ix, iy);
                for k in 0..nk {
                    let zb = c4.map(|v| self.vz(v, k));
                    let zt = c4.map(|v| self.vz(v, k + 1));
                    vol[self.cell_id(ix, iy, k)] = hex_volume(dx, dy, &zb, &zt);
                }
            }
        }
        self.cell_volume = vol;

        let mut area = vec![0.0; self.n_flux_dofs()];
        for iy in 0..ny {
            for ix in 0..nx {
                // x-normal face at x = ix * dx: vertical edges over vertices
                // (ix, iy) and (ix, iy + 1).
                let v0 = self.vcol(ix, iy);
                let v1 = self.vcol(ix, (iy + 1) % ny);
                for k in 0..nk {
                    let t0 = self.vz(v0, k + 1) - self.vz(v0, k);
                    let t1 = self.vz(v1, k + 1) - self.vz(v1, k);
                    area[self.x_face_id(ix, iy, k)] = lateral_area(dy, t0, t1);
                }
                // y-normal face at y = iy * dy.
                let v0 = self.vcol(ix, iy);
                let v1 = self.vcol((ix + 1) % nx, iy);
                for k in 0..nk {
                    let t0 = self.vz(v0, k + 1) - self.vz(v0, k);
                    let t1 = self.vz(v1, k + 1) - self.vz(v1, k);
                    area[self.y_face_id(ix, iy, k)] = lateral_area(dx, t0, t1);
                }
                // z-normal faces at every interface of the column.
                let c4 = self.corner_cols(ix, iy);
                for k in 0..=nk {
                    let z = c4.map(|v| self.vz(v, k));
                    area[self.z_face_id(ix, iy, k)] = zface_area(dx, dy, &z);
                }
            }
        }
        self.face_area = area;
    }

    /// Vertically shifted twin: interfaces at primary layer midpoints plus
    /// the unchanged bottom and top, built by bisecting this mesh's vertex
    /// heights so the twins agree per vertex column.
    pub fn shifted_twin(&self) -> ExtrudedMesh {
        let nk = self.nk();
        let mut vz = Vec::with_capacity(self.ncols() * (nk + 2));
        for vcol in 0..self.ncols() {
            vz.push(self.vz(vcol, 0));
            for k in 0..nk {
                vz.push(0.5 * (self.vz(vcol, k) + self.vz(vcol, k + 1)));
            }
            vz.push(self.vz(vcol, nk));
        }
        Self::from_vertex_heights(self.horizontal.clone(), self.vertical.shifted(), vz, true)
    }

    pub fn nx(&self) -> usize {
        self.horizontal.nx
    }

    pub fn ny(&self) -> usize {
        self.horizontal.ny
    }

    pub fn nk(&self) -> usize {
        self.vertical.nk()
    }

    pub fn dx(&self) -> f64 {
        self.horizontal.dx()
    }

    pub fn dy(&self) -> f64 {
        self.horizontal.dy()
    }

    pub fn ncols(&self) -> usize {
        self.horizontal.ncols()
    }

    pub fn ncells(&self) -> usize {
        self.ncols() * self.nk()
    }

    fn vcol(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx() + ix
    }

    fn vz(&self, vcol: usize, k: usize) -> f64 {
        self.vertex_z[vcol * (self.nk() + 1) + k]
    }

    /// Interface height at vertex `(ix, iy)`, level `k`.
    pub fn vertex_height(&self, ix: usize, iy: usize, k: usize) -> f64 {
        self.vz(self.vcol(ix, iy), k)
    }

    /// The four vertex columns at the corners of column `(ix, iy)`, in the
    /// order (x0y0, x1y0, x0y1, x1y1).
    fn corner_cols(&self, ix: usize, iy: usize) -> [usize; 4] {
        let (nx, ny) = (self.nx(), self.ny());
        let ixp = (ix + 1) % nx;
        let iyp = (iy + 1) % ny;
        [self.vcol(ix, iy), self.vcol(ixp, iy), self.vcol(ix, iyp), self.vcol(ixp, iyp)]
    }

    pub fn cell_id(&self, ix: usize, iy: usize, k: usize) -> usize {
        (iy * self.nx() + ix) * self.nk() + k
    }

    pub fn col_id(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx() + ix
    }

    pub fn cell_volumes(&self) -> &[f64] {
        &self.cell_volume
    }

    pub fn cell_volume(&self, cell: usize) -> Result<f64> {
        self.cell_volume
            .get(cell)
            .copied()
            .ok_or(Error::IndexOutOfRange { index: cell, len: self.cell_volume.len() })
    }

    /// Mean layer thickness of a cell; used for vertical Courant estimates.
    pub fn cell_mean_thickness(&self, cell: usize) -> f64 {
        self.cell_volume[cell] / (self.dx() * self.dy())
    }

    pub fn n_xfaces(&self) -> usize {
        self.ncols() * self.nk()
    }

    pub fn n_yfaces(&self) -> usize {
        self.ncols() * self.nk()
    }

    pub fn n_zfaces(&self) -> usize {
        self.ncols() * (self.nk() + 1)
    }

    /// Total flux-space dofs: one per unique face of the periodic mesh.
    pub fn n_flux_dofs(&self) -> usize {
        self.n_xfaces() + self.n_yfaces() + self.n_zfaces()
    }

    /// Face at `x = ix * dx` between columns `ix - 1` and `ix` (periodic).
    pub fn x_face_id(&self, ix: usize, iy: usize, k: usize) -> usize {
        (iy * self.nx() + ix) * self.nk() + k
    }

    /// Face at `y = iy * dy` between columns `iy - 1` and `iy` (periodic).
    pub fn y_face_id(&self, ix: usize, iy: usize, k: usize) -> usize {
        self.n_xfaces() + (iy * self.nx() + ix) * self.nk() + k
    }

    /// Horizontal face of column `(ix, iy)` at interface `k` in `0..=nk`.
    pub fn z_face_id(&self, ix: usize, iy: usize, k: usize) -> usize {
        self.n_xfaces() + self.n_yfaces() + (iy * self.nx() + ix) * (self.nk() + 1) + k
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_area
    }

    pub fn face_area(&self, face: usize) -> Result<f64> {
        self.face_area
            .get(face)
            .copied()
            .ok_or(Error::IndexOutOfRange { index: face, len: self.face_area.len() })
    }

    /// One `i j k volume` record per cell, for debugging geometry.
    pub fn dump_volumes(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "# ix iy k volume")?;
        for iy in 0..self.ny() {
            for ix in 0..self.nx() {
                for k in 0..self.nk() {
                    writeln!(w, "{} {} {} {}", ix, iy, k, self.cell_volume[self.cell_id(ix, iy, k)])?;
                }
            }
        }
        Ok(())
    }
}

/// How a fine face relates to the coarse mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceRelation {
    /// Coincides with (a piece of) a coarse face.
    Exterior { coarse_face: usize },
    /// Lies strictly inside a coarse cell, at fractional position `alpha`
    /// between the coarse faces `lo` and `hi` on the same axis.
    Interior { lo: usize, hi: usize, alpha: f64 },
}

/// Nesting relations between a fine and a coarse mesh of one vertical kind.
#[derive(Debug)]
pub struct NestingMap {
    pub r: usize,
    /// Coarse cell -> its `r * r` fine cells, stride `r * r`.
    children: Vec<usize>,
    /// Fine cell -> coarse parent cell.
    parent: Vec<usize>,
    /// Coarse column -> its `r * r` fine columns, stride `r * r`.
    col_children: Vec<usize>,
    /// Coarse face dof -> coincident fine face dofs.
    coarse_face_children: Vec<Vec<usize>>,
    /// Fine face dof -> relation to the coarse mesh.
    fine_face_rel: Vec<FaceRelation>,
}

impl NestingMap {
    pub fn build(fine: &ExtrudedMesh, coarse: &ExtrudedMesh, r: usize) -> Self {
        let nk = fine.nk();
        let (cnx, cny) = (coarse.nx(), coarse.ny());
        debug_assert_eq!(nk, coarse.nk());
        debug_assert_eq!(fine.nx(), cnx * r);
        debug_assert_eq!(fine.ny(), cny * r);

        let mut children = vec![0usize; coarse.ncells() * r * r];
        let mut parent = vec![0usize; fine.ncells()];
        let mut col_children = vec![0usize; coarse.ncols() * r * r];
        for cy in 0..cny {
            for cx in 0..cnx {
                let ccol = coarse.col_id(cx, cy);
                let mut slot = 0;
                for gy in 0..r {
                    for gx in 0..r {
                        let (fx, fy) = (cx * r + gx, cy * r + gy);
                        col_children[ccol * r * r + slot] = fine.col_id(fx, fy);
                        for k in 0..nk {
                            let cc = coarse.cell_id(cx, cy, k);
                            let fc = fine.cell_id(fx, fy, k);
                            children[cc * r * r + slot] = fc;
                            parent[fc] = cc;
                        }
                        slot += 1;
                    }
                }
            }
        }

        let mut coarse_face_children: Vec<Vec<usize>> = vec![Vec::new(); coarse.n_flux_dofs()];
        let mut fine_face_rel = vec![
            FaceRelation::Exterior { coarse_face: 0 };
            fine.n_flux_dofs()
        ];
        let (fnx, fny) = (fine.nx(), fine.ny());
        for fy in 0..fny {
            for fx in 0..fnx {
                let (cx, cy) = (fx / r, fy / r);
                for k in 0..nk {
                    let f = fine.x_face_id(fx, fy, k);
                    if fx % r == 0 {
                        let cf = coarse.x_face_id(cx, cy, k);
                        fine_face_rel[f] = FaceRelation::Exterior { coarse_face: cf };
                        coarse_face_children[cf].push(f);
                    } else {
                        fine_face_rel[f] = FaceRelation::Interior {
                            lo: coarse.x_face_id(cx, cy, k),
                            hi: coarse.x_face_id((cx + 1) % cnx, cy, k),
                            alpha: (fx % r) as f64 / r as f64,
                        };
                    }
                    let f = fine.y_face_id(fx, fy, k);
                    if fy % r == 0 {
                        let cf = coarse.y_face_id(cx, cy, k);
                        fine_face_rel[f] = FaceRelation::Exterior { coarse_face: cf };
                        coarse_face_children[cf].push(f);
                    } else {
                        fine_face_rel[f] = FaceRelation::Interior {
                            lo: coarse.y_face_id(cx, cy, k),
                            hi: coarse.y_face_id(cx, (cy + 1) % cny, k),
                            alpha: (fy % r) as f64 / r as f64,
                        };
                    }
                }
                for k in 0..=nk {
                    let f = fine.z_face_id(fx, fy, k);
                    let cf = coarse.z_face_id(cx, cy, k);
                    fine_face_rel[f] = FaceRelation::Exterior { coarse_face: cf };
                    coarse_face_children[cf].push(f);
                }
            }
        }

        Self { r, children, parent, col_children, coarse_face_children, fine_face_rel }
    }

    pub fn children_per_cell(&self) -> usize {
        self.r * self.r
    }

    pub fn children_of(&self, coarse_cell: usize) -> &[usize] {
        let n = self.children_per_cell();
        &self.children[coarse_cell * n..(coarse_cell + 1) * n]
    }

    pub fn parent_of(&self, fine_cell: usize) -> usize {
        self.parent[fine_cell]
    }

    pub fn col_children_of(&self, coarse_col: usize) -> &[usize] {
        let n = self.children_per_cell();
        &self.col_children[coarse_col * n..(coarse_col + 1) * n]
    }

    /// Fine faces coincident with a coarse face: `r` for a lateral face, the
    /// full `r * r` for a horizontal face.
    pub fn faces_of(&self, coarse_face: usize) -> &[usize] {
        &self.coarse_face_children[coarse_face]
    }

    pub fn face_relation(&self, fine_face: usize) -> FaceRelation {
        self.fine_face_rel[fine_face]
    }

    pub fn n_coarse_faces(&self) -> usize {
        self.coarse_face_children.len()
    }
}

/// A fine mesh, a coarse mesh, their nesting map and the operator weights
/// built on the trio; one of these exists for the primary meshes and one for
/// the shifted twins.
#[derive(Debug)]
pub struct LevelPair {
    pub fine: Arc<ExtrudedMesh>,
    pub coarse: Arc<ExtrudedMesh>,
    pub nesting: NestingMap,
    pub ops: PairOperators,
}

/// Everything needed to map fields between two nested meshes: the primary
/// extruded meshes, their vertically shifted twins, and per-level nesting
/// maps and operator weights.
#[derive(Debug)]
pub struct NestedMeshPair {
    pub r: usize,
    pub primary: LevelPair,
    pub shifted: LevelPair,
}

impl NestedMeshPair {
    /// Build the fine mesh from its parts, derive the coarse mesh by copying
    /// vertex heights at shared vertices, and construct both shifted twins.
    pub fn build(
        fine_horizontal: HorizontalMesh,
        vertical: VerticalGrid,
        r: usize,
        orography: &Orography,
    ) -> Result<Self> {
        let coarse_horizontal = fine_horizontal.coarsen(r)?;
        let fine = ExtrudedMesh::build(fine_horizontal, vertical.clone(), orography)?;

        // Coarse vertex (cx, cy) coincides with fine vertex (r*cx, r*cy);
        // heights are copied, never re-derived from the surface field.
        let nk = vertical.nk();
        let mut vz = Vec::with_capacity(coarse_horizontal.ncols() * (nk + 1));
        for cy in 0..coarse_horizontal.ny {
            for cx in 0..coarse_horizontal.nx {
                for k in 0..=nk {
                    vz.push(fine.vertex_height(cx * r, cy * r, k));
                }
            }
        }
        let coarse =
            ExtrudedMesh::from_vertex_heights(coarse_horizontal, vertical, vz, false);

        let shifted_fine = fine.shifted_twin();
        let shifted_coarse = coarse.shifted_twin();

        let fine = Arc::new(fine);
        let coarse = Arc::new(coarse);
        let shifted_fine = Arc::new(shifted_fine);
        let shifted_coarse = Arc::new(shifted_coarse);

        let nesting = NestingMap::build(&fine, &coarse, r);
        let shifted_nesting = NestingMap::build(&shifted_fine, &shifted_coarse, r);
        let ops = PairOperators::build(&fine, &coarse, &nesting);
        let shifted_ops = PairOperators::build(&shifted_fine, &shifted_coarse, &shifted_nesting);

        Ok(Self {
            r,
            primary: LevelPair { fine, coarse, nesting, ops },
            shifted: LevelPair { fine: shifted_fine, coarse: shifted_coarse, nesting: shifted_nesting, ops: shifted_ops },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_pair(nx: usize, ny: usize, nk: usize) -> NestedMeshPair {
        let h = HorizontalMesh::new(nx, ny, nx as f64, ny as f64).unwrap();
        let v = VerticalGrid::uniform(nk, 0.0, nk as f64).unwrap();
        NestedMeshPair::build(h, v, 2, &Orography::flat()).unwrap()
    }

    fn bump_pair(nx: usize, ny: usize, nk: usize) -> NestedMeshPair {
        let h = HorizontalMesh::new(nx, ny, nx as f64, ny as f64).unwrap();
        let v = VerticalGrid::uniform(nk, 0.0, 10.0 * nk as f64).unwrap();
        let (lx, ly) = (h.lx, h.ly);
        let orog = Orography::from_fn(&h, |x, y| {
            let rx = (x / lx - 0.45).abs().min(1.0 - (x / lx - 0.45).abs());
            let ry = (y / ly - 0.45).abs().min(1.0 - (y / ly - 0.45).abs());
            let d2 = rx * rx + ry * ry;
            2.0 * nk as f64 * (-d2 / 0.02).exp()
        });
        NestedMeshPair::build(h, v, 2, &orog).unwrap()
    }

    #[test]
    fn geometry_closed_forms() {
        // Flat box 1 x 1 x 2.
        assert_eq!(hex_volume(1.0, 1.0, &[0.0; 4], &[2.0; 4]), 2.0);
        // Prism: top sloping from 2 at x0 to 4 at x1 over a unit footprint.
        assert_eq!(hex_volume(1.0, 1.0, &[0.0; 4], &[2.0, 4.0, 2.0, 4.0]), 3.0);
        // Vertical trapezoid with edge thicknesses 2 and 4 over unit width.
        assert_eq!(lateral_area(1.0, 2.0, 4.0), 3.0);
        // Horizontal face of a flat cell.
        assert_eq!(zface_area(1.0, 1.0, &[5.0; 4]), 1.0);
        // Plane sloping in x only: area stretches by sqrt(1 + b^2).
        let b = 0.75;
        let got = zface_area(1.0, 1.0, &[0.0, b, 0.0, b]);
        assert!((got - (1.0 + b * b).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn refinement_must_divide() {
        let h = HorizontalMesh::new(6, 6, 6.0, 6.0).unwrap();
        let v = VerticalGrid::uniform(1, 0.0, 1.0).unwrap();
        let err = NestedMeshPair::build(h, v, 4, &Orography::flat());
        assert!(matches!(err, Err(Error::RefinementMismatch { r: 4, nx: 6, ny: 6 })));
    }

    #[test]
    fn orography_must_stay_below_the_lid() {
        let h = HorizontalMesh::new(4, 4, 4.0, 4.0).unwrap();
        let v = VerticalGrid::uniform(2, 0.0, 2.0).unwrap();
        let orog = Orography::from_fn(&h, |x, _| if x == 0.0 { 2.5 } else { 0.0 });
        assert!(matches!(
            ExtrudedMesh::build(h, v, &orog),
            Err(Error::OrographyOutOfRange { .. })
        ));
    }

    #[test]
    fn flat_fine_volumes_tile_coarse() {
        let pair = flat_pair(4, 4, 2);
        let p = &pair.primary;
        for cc in 0..p.coarse.ncells() {
            let sum: f64 = p.nesting.children_of(cc).iter().map(|&f| p.fine.cell_volumes()[f]).sum();
            let cv = p.coarse.cell_volumes()[cc];
            assert!((sum - cv).abs() <= 1e-13 * cv);
        }
    }

    #[test]
    fn flat_fine_areas_tile_coarse() {
        let pair = flat_pair(4, 4, 2);
        let p = &pair.primary;
        for cf in 0..p.nesting.n_coarse_faces() {
            let sum: f64 = p.nesting.faces_of(cf).iter().map(|&f| p.fine.face_areas()[f]).sum();
            let ca = p.coarse.face_areas()[cf];
            assert!((sum - ca).abs() <= 1e-13 * ca);
        }
    }

    /// Independent volume oracle: midpoint sampling of the bilinear corner
    /// interpolation of thickness is exact for bilinear surfaces.
    fn midpoint_volume(dx: f64, dy: f64, zb: &[f64; 4], zt: &[f64; 4]) -> f64 {
        let n = 8;
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                let u = (i as f64 + 0.5) / n as f64;
                let v = (j as f64 + 0.5) / n as f64;
                let at = |z: &[f64; 4]| {
                    z[0] * (1.0 - u) * (1.0 - v) + z[1] * u * (1.0 - v)
                        + z[2] * (1.0 - u) * v + z[3] * u * v
                };
                acc += at(zt) - at(zb);
            }
        }
        dx * dy * acc / (n * n) as f64
    }

    #[test]
    fn bump_volumes_match_quadrature_but_need_not_tile() {
        let pair = bump_pair(4, 4, 2);
        let p = &pair.primary;
        let f = &p.fine;
        // Every fine volume agrees with the independent quadrature.
        for iy in 0..f.ny() {
            for ix in 0..f.nx() {
                for k in 0..f.nk() {
                    let c4 = [
                        (ix, iy),
                        ((ix + 1) % f.nx(), iy),
                        (ix, (iy + 1) % f.ny()),
                        ((ix + 1) % f.nx(), (iy + 1) % f.ny()),
                    ];
                    let zb = c4.map(|(vx, vy)| f.vertex_height(vx, vy, k));
                    let zt = c4.map(|(vx, vy)| f.vertex_height(vx, vy, k + 1));
                    let want = midpoint_volume(f.dx(), f.dy(), &zb, &zt);
                    let got = f.cell_volumes()[f.cell_id(ix, iy, k)];
                    assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
                }
            }
        }
        // Under orography at least one coarse cell is not tiled by its fine
        // children: the coarse bilinear surface cuts across the bump.
        let mut worst = 0.0f64;
        for cc in 0..p.coarse.ncells() {
            let sum: f64 = p.nesting.children_of(cc).iter().map(|&c| f.cell_volumes()[c]).sum();
            worst = worst.max((sum - p.coarse.cell_volumes()[cc]).abs());
        }
        assert!(worst > 1e-6, "expected a volume mismatch, worst {worst}");
    }

    #[test]
    fn coarse_vertices_are_copied_from_fine() {
        let pair = bump_pair(8, 8, 2);
        let p = &pair.primary;
        for cy in 0..p.coarse.ny() {
            for cx in 0..p.coarse.nx() {
                for k in 0..=p.coarse.nk() {
                    assert_eq!(
                        p.coarse.vertex_height(cx, cy, k),
                        p.fine.vertex_height(2 * cx, 2 * cy, k)
                    );
                }
            }
        }
    }

    #[test]
    fn shifted_grid_bisects_layers() {
        let v = VerticalGrid::new(vec![0.0, 1.0, 3.0]).unwrap();
        assert_eq!(v.shifted().z_levels, vec![0.0, 0.5, 2.0, 3.0]);

        // Uniform two-layer column of thickness 2 each: shifted thicknesses
        // are [1, 2, 1], so the bottom shifted cell of a unit column has
        // volume 1.
        let h = HorizontalMesh::new(2, 2, 2.0, 2.0).unwrap();
        let v = VerticalGrid::uniform(2, 0.0, 4.0).unwrap();
        let m = ExtrudedMesh::build(h, v, &Orography::flat()).unwrap();
        let s = m.shifted_twin();
        assert_eq!(s.nk(), 3);
        assert!((s.cell_volumes()[s.cell_id(0, 0, 0)] - 1.0).abs() < 1e-15);
        assert!((s.cell_volumes()[s.cell_id(0, 0, 1)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn shifted_columns_hold_the_same_volume() {
        for pair in [flat_pair(4, 4, 3), bump_pair(4, 4, 3)] {
            let (m, s) = (&pair.primary.fine, &pair.shifted.fine);
            for col in 0..m.ncols() {
                let a: f64 = (0..m.nk()).map(|k| m.cell_volumes()[col * m.nk() + k]).sum();
                let b: f64 = (0..s.nk()).map(|k| s.cell_volumes()[col * s.nk() + k]).sum();
                assert!((a - b).abs() <= 1e-13 * a);
            }
        }
    }

    #[test]
    fn flux_dof_counts() {
        let pair = flat_pair(4, 4, 3);
        let m = &pair.primary.fine;
        assert_eq!(m.n_flux_dofs(), 2 * 4 * 4 * 3 + 4 * 4 * 4);
    }

    #[test]
    fn face_partition_is_exhaustive() {
        let pair = bump_pair(4, 4, 2);
        let p = &pair.primary;
        let r = pair.r;
        let mut seen = vec![false; p.fine.n_flux_dofs()];
        for cf in 0..p.nesting.n_coarse_faces() {
            let kids = p.nesting.faces_of(cf);
            let expect = if cf >= p.coarse.n_xfaces() + p.coarse.n_yfaces() { r * r } else { r };
            assert_eq!(kids.len(), expect);
            for &f in kids {
                assert!(!seen[f]);
                seen[f] = true;
                assert_eq!(p.nesting.face_relation(f), FaceRelation::Exterior { coarse_face: cf });
            }
        }
        for f in 0..p.fine.n_flux_dofs() {
            match p.nesting.face_relation(f) {
                FaceRelation::Exterior { .. } => assert!(seen[f]),
                FaceRelation::Interior { lo, hi, alpha } => {
                    assert!(!seen[f]);
                    assert!(lo < p.nesting.n_coarse_faces() && hi < p.nesting.n_coarse_faces());
                    assert!(alpha > 0.0 && alpha < 1.0);
                }
            }
        }
    }

    #[test]
    fn cell_parenthood_is_consistent() {
        let pair = flat_pair(6, 4, 2);
        let p = &pair.primary;
        for cc in 0..p.coarse.ncells() {
            let kids = p.nesting.children_of(cc);
            assert_eq!(kids.len(), 4);
            for &f in kids {
                assert_eq!(p.nesting.parent_of(f), cc);
            }
        }
    }
}
