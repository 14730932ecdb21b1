//! Discrete fields over an extruded mesh.
//!
//! A field is a flat dof vector tagged with the function space it discretises:
//!
//! * `Vrho` — one value per cell of a primary mesh (densities, cell scalars);
//! * `Vtheta` — one value per column interface of a primary mesh, `nk + 1`
//!   levels per column (potential temperature, mixing ratios);
//! * `VrhoShifted` — one value per cell of a vertically shifted twin, which
//!   has `nk + 1` layers and pairs one-to-one with `Vtheta` levels;
//! * `Vu` — one normal component per unique face (fluxes and winds).
//!
//! Dof order is column-major with the level index fastest; `Vu` follows the
//! face layout of the mesh. Fields carry an `Arc` of their mesh so mismatched
//! operands are rejected rather than silently combined.

use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::ExtrudedMesh;

/// Function space of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceTag {
    Vrho,
    Vtheta,
    VrhoShifted,
    Vu,
}

impl SpaceTag {
    pub fn name(self) -> &'static str {
        match self {
            SpaceTag::Vrho => "Vrho",
            SpaceTag::Vtheta => "Vtheta",
            SpaceTag::VrhoShifted => "VrhoShifted",
            SpaceTag::Vu => "Vu",
        }
    }

    /// Dof count of this space on `mesh`.
    pub fn len_on(self, mesh: &ExtrudedMesh) -> usize {
        match self {
            SpaceTag::Vrho | SpaceTag::VrhoShifted => mesh.ncells(),
            SpaceTag::Vtheta => mesh.ncols() * (mesh.nk() + 1),
            SpaceTag::Vu => mesh.n_flux_dofs(),
        }
    }

    /// Whether the space may live on a vertically shifted mesh.
    fn compatible(self, mesh: &ExtrudedMesh) -> bool {
        match self {
            SpaceTag::Vrho | SpaceTag::Vtheta => !mesh.shifted,
            SpaceTag::VrhoShifted => mesh.shifted,
            SpaceTag::Vu => true,
        }
    }
}

/// A dof vector in one function space on one mesh.
#[derive(Debug, Clone)]
pub struct Field {
    mesh: Arc<ExtrudedMesh>,
    space: SpaceTag,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(mesh: &Arc<ExtrudedMesh>, space: SpaceTag) -> Result<Self> {
        Self::from_values(mesh, space, vec![0.0; space.len_on(mesh)])
    }

    pub fn constant(mesh: &Arc<ExtrudedMesh>, space: SpaceTag, value: f64) -> Result<Self> {
        Self::from_values(mesh, space, vec![value; space.len_on(mesh)])
    }

    pub fn from_values(mesh: &Arc<ExtrudedMesh>, space: SpaceTag, values: Vec<f64>) -> Result<Self> {
        if !space.compatible(mesh) {
            return Err(Error::LayoutMismatch(format!(
                "{} cannot live on a {} mesh",
                space.name(),
                if mesh.shifted { "shifted" } else { "primary" }
            )));
        }
        let want = space.len_on(mesh);
        if values.len() != want {
            return Err(Error::LayoutMismatch(format!(
                "{} on {}x{}x{} needs {} dofs, got {}",
                space.name(),
                mesh.nx(),
                mesh.ny(),
                mesh.nk(),
                want,
                values.len()
            )));
        }
        Ok(Self { mesh: mesh.clone(), space, values })
    }

    /// Fill from a function of the dof index.
    pub fn from_fn(
        mesh: &Arc<ExtrudedMesh>,
        space: SpaceTag,
        f: impl FnMut(usize) -> f64,
    ) -> Result<Self> {
        let n = space.len_on(mesh);
        Self::from_values(mesh, space, (0..n).map(f).collect())
    }

    pub fn space(&self) -> SpaceTag {
        self.space
    }

    pub fn mesh(&self) -> &Arc<ExtrudedMesh> {
        &self.mesh
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Both fields on the same mesh object and in the same space.
    fn conformal(&self, other: &Field) -> Result<()> {
        if !Arc::ptr_eq(&self.mesh, &other.mesh) {
            return Err(Error::MeshMismatch);
        }
        if self.space != other.space {
            return Err(Error::LayoutMismatch(format!(
                "cannot combine {} with {}",
                self.space.name(),
                other.space.name()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.conformal(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Field { mesh: self.mesh.clone(), space: self.space, values })
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.conformal(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Field { mesh: self.mesh.clone(), space: self.space, values })
    }

    pub fn scale(&self, s: f64) -> Field {
        let values = self.values.iter().map(|a| a * s).collect();
        Field { mesh: self.mesh.clone(), space: self.space, values }
    }

    pub fn mul_pointwise(&self, other: &Field) -> Result<Field> {
        self.conformal(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Ok(Field { mesh: self.mesh.clone(), space: self.space, values })
    }

    /// Pointwise quotient; denominators must stay away from zero.
    pub fn div_pointwise(&self, other: &Field) -> Result<Field> {
        self.conformal(other)?;
        let mut values = Vec::with_capacity(self.values.len());
        for (i, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            if b.abs() <= 1e-300 {
                return Err(Error::DivisionByZero { index: i });
            }
            values.push(a / b);
        }
        Ok(Field { mesh: self.mesh.clone(), space: self.space, values })
    }

    pub fn axpy(&mut self, s: f64, other: &Field) -> Result<()> {
        self.conformal(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn linf_diff(&self, other: &Field) -> Result<f64> {
        self.conformal(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Integral of a cell field over the mesh: sum of value times volume.
    /// Only cell spaces carry a volume measure.
    pub fn total_mass(&self) -> Result<f64> {
        match self.space {
            SpaceTag::Vrho | SpaceTag::VrhoShifted => Ok(self
                .values
                .iter()
                .zip(self.mesh.cell_volumes())
                .map(|(v, vol)| v * vol)
                .sum()),
            _ => Err(Error::LayoutMismatch(format!(
                "total mass is defined for cell fields, not {}",
                self.space.name()
            ))),
        }
    }

    /// Plain-text dump: a single header line `space nx ny nk` followed by one
    /// value per line in dof order.
    pub fn write_ascii(&self, w: &mut impl Write) -> Result<()> {
        writeln!(
            w,
            "{} {} {} {}",
            self.space.name(),
            self.mesh.nx(),
            self.mesh.ny(),
            self.mesh.nk()
        )?;
        for v in &self.values {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    pub fn dump_to_path(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_ascii(&mut w)?;
        w.flush()?;
        Ok(())
    }
}
