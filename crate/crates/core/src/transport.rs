//! Flux-form transport: dry density stepped on the fine mesh, tracers stepped
//! on the coarse mesh from the restricted dry mass flux.
//!
//! The coupling rests on two exact identities. The flux operator returns
//! `C * F` for a constant mixing ratio (its face value is the unmodified
//! upstream value, so a constant passes through untouched), and restriction
//! commutes with the divergence because the coarse face flux is defined as
//! the sum of its fine faces' fluxes. Together they make the coarse tracer
//! update follow the coarse dry-density update for a constant ratio, so
//! consistency holds for any wind and any orography; conservation is plain
//! flux-form telescoping on each mesh. The dry step accumulates the time-mean
//! mass flux (and wind) over its substeps, so the coarse step sees exactly
//! the flux that moved the fine density, not an instantaneous sample.
//!
//! An advective-form tracer update is included as the comparison baseline:
//! it preserves constants but has no mass budget, which is the contrast the
//! conservative scheme exists to fix.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{Field, SpaceTag};
use crate::mesh::{ExtrudedMesh, LevelPair};
use crate::remap::{restrict_density, restrict_wind};

/// Face-value reconstruction for the tracer flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxScheme {
    /// First-order upstream cell value.
    Upwind1,
    /// Upstream-biased linear value `a_up + (a_up - a_upup) / 2`, stepped
    /// with a two-stage (Heun) integrator; falls back to first order where
    /// the second upstream cell would cross ground or lid.
    LinearUpwind2,
}

/// Scheme and substep count shared by the fine and coarse updates.
#[derive(Debug, Clone, Copy)]
pub struct TransportConfig {
    pub scheme: FluxScheme,
    pub substeps: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self { scheme: FluxScheme::Upwind1, substeps: 1 }
    }
}

impl TransportConfig {
    fn n(&self) -> usize {
        self.substeps.max(1)
    }
}

fn cell_space(mesh: &ExtrudedMesh) -> SpaceTag {
    if mesh.shifted {
        SpaceTag::VrhoShifted
    } else {
        SpaceTag::Vrho
    }
}

fn expect_cell_on(f: &Field, mesh: &Arc<ExtrudedMesh>) -> Result<()> {
    if !Arc::ptr_eq(f.mesh(), mesh) {
        return Err(Error::MeshMismatch);
    }
    let want = cell_space(mesh);
    if f.space() != want {
        return Err(Error::LayoutMismatch(format!(
            "transport needs {} here, got {}",
            want.name(),
            f.space().name()
        )));
    }
    Ok(())
}

fn expect_flux_on(f: &Field, mesh: &Arc<ExtrudedMesh>) -> Result<()> {
    if !Arc::ptr_eq(f.mesh(), mesh) {
        return Err(Error::MeshMismatch);
    }
    if f.space() != SpaceTag::Vu {
        return Err(Error::LayoutMismatch(format!("expected Vu, got {}", f.space().name())));
    }
    Ok(())
}

/// Cell divergence of a face flux: `sum of outward flux * area / volume`.
pub fn divergence(flux: &Field) -> Result<Field> {
    let mesh = flux.mesh();
    expect_flux_on(flux, mesh)?;
    let (nx, ny, nk) = (mesh.nx(), mesh.ny(), mesh.nk());
    let fv = flux.values();
    let area = mesh.face_areas();
    let vol = mesh.cell_volumes();
    let mut vals = vec![0.0; mesh.ncells()];
    for iy in 0..ny {
        for ix in 0..nx {
            let xp = (ix + 1) % nx;
            let yp = (iy + 1) % ny;
            for k in 0..nk {
                let fe = mesh.x_face_id(xp, iy, k);
                let fw = mesh.x_face_id(ix, iy, k);
                let fn_ = mesh.y_face_id(ix, yp, k);
                let fs = mesh.y_face_id(ix, iy, k);
                let ft = mesh.z_face_id(ix, iy, k + 1);
                let fb = mesh.z_face_id(ix, iy, k);
                let c = mesh.cell_id(ix, iy, k);
                vals[c] = (fv[fe] * area[fe] - fv[fw] * area[fw] + fv[fn_] * area[fn_]
                    - fv[fs] * area[fs]
                    + fv[ft] * area[ft]
                    - fv[fb] * area[fb])
                    / vol[c];
            }
        }
    }
    Field::from_values(mesh, cell_space(mesh), vals)
}

/// Per-face upstream tracer values under `scheme`, upwinded by the sign of
/// `drive`. Ground and lid faces take the adjacent cell's value, which keeps
/// constants exact; the physical flows drive zero flux there anyway.
fn face_values(a: &Field, drive: &Field, scheme: FluxScheme) -> Vec<f64> {
    let mesh = a.mesh();
    let (nx, ny, nk) = (mesh.nx(), mesh.ny(), mesh.nk());
    let av = a.values();
    let dv = drive.values();
    let blend = |up: f64, upup: f64| match scheme {
        FluxScheme::Upwind1 => up,
        FluxScheme::LinearUpwind2 => up + 0.5 * (up - upup),
    };
    let mut out = vec![0.0; mesh.n_flux_dofs()];
    for iy in 0..ny {
        for ix in 0..nx {
            let xm1 = (ix + nx - 1) % nx;
            let xm2 = (ix + nx - 2) % nx;
            let xp1 = (ix + 1) % nx;
            let ym1 = (iy + ny - 1) % ny;
            let ym2 = (iy + ny - 2) % ny;
            let yp1 = (iy + 1) % ny;
            for k in 0..nk {
                let f = mesh.x_face_id(ix, iy, k);
                out[f] = if dv[f] >= 0.0 {
                    blend(av[mesh.cell_id(xm1, iy, k)], av[mesh.cell_id(xm2, iy, k)])
                } else {
                    blend(av[mesh.cell_id(ix, iy, k)], av[mesh.cell_id(xp1, iy, k)])
                };
                let f = mesh.y_face_id(ix, iy, k);
                out[f] = if dv[f] >= 0.0 {
                    blend(av[mesh.cell_id(ix, ym1, k)], av[mesh.cell_id(ix, ym2, k)])
                } else {
                    blend(av[mesh.cell_id(ix, iy, k)], av[mesh.cell_id(ix, yp1, k)])
                };
            }
            for k in 0..=nk {
                let f = mesh.z_face_id(ix, iy, k);
                out[f] = if k == 0 {
                    av[mesh.cell_id(ix, iy, 0)]
                } else if k == nk {
                    av[mesh.cell_id(ix, iy, nk - 1)]
                } else if dv[f] >= 0.0 {
                    let up = av[mesh.cell_id(ix, iy, k - 1)];
                    if k >= 2 {
                        blend(up, av[mesh.cell_id(ix, iy, k - 2)])
                    } else {
                        up
                    }
                } else {
                    let up = av[mesh.cell_id(ix, iy, k)];
                    if k + 1 < nk {
                        blend(up, av[mesh.cell_id(ix, iy, k + 1)])
                    } else {
                        up
                    }
                };
            }
        }
    }
    out
}

/// Tracer flux through each face: upstream face value times the driving
/// flux. For a constant ratio `C` this is exactly `C * drive`.
pub fn flux_operator(a: &Field, drive: &Field, scheme: FluxScheme) -> Result<Field> {
    expect_cell_on(a, a.mesh())?;
    expect_flux_on(drive, a.mesh())?;
    let vals: Vec<f64> = face_values(a, drive, scheme)
        .into_iter()
        .zip(drive.values())
        .map(|(v, d)| v * d)
        .collect();
    Field::from_values(a.mesh(), SpaceTag::Vu, vals)
}

/// Largest face Courant number `|u| * dt / spacing`.
pub fn max_courant(wind: &Field, dt: f64) -> Result<f64> {
    let mesh = wind.mesh();
    expect_flux_on(wind, mesh)?;
    let (nx, ny, nk) = (mesh.nx(), mesh.ny(), mesh.nk());
    let wv = wind.values();
    let mut worst = 0.0f64;
    for iy in 0..ny {
        for ix in 0..nx {
            for k in 0..nk {
                worst = worst.max(wv[mesh.x_face_id(ix, iy, k)].abs() * dt / mesh.dx());
                worst = worst.max(wv[mesh.y_face_id(ix, iy, k)].abs() * dt / mesh.dy());
            }
            for k in 0..=nk {
                let mut dz = f64::INFINITY;
                if k > 0 {
                    dz = dz.min(mesh.cell_mean_thickness(mesh.cell_id(ix, iy, k - 1)));
                }
                if k < nk {
                    dz = dz.min(mesh.cell_mean_thickness(mesh.cell_id(ix, iy, k)));
                }
                worst = worst.max(wv[mesh.z_face_id(ix, iy, k)].abs() * dt / dz);
            }
        }
    }
    Ok(worst)
}

/// Advective-form tendency `(1/V) * sum of outward u * A * (a_face - a_cell)`.
fn advective_increment(a: &Field, wind: &Field, scheme: FluxScheme) -> Result<Field> {
    expect_cell_on(a, a.mesh())?;
    expect_flux_on(wind, a.mesh())?;
    let mesh = a.mesh();
    let (nx, ny, nk) = (mesh.nx(), mesh.ny(), mesh.nk());
    let fv = face_values(a, wind, scheme);
    let av = a.values();
    let wv = wind.values();
    let area = mesh.face_areas();
    let vol = mesh.cell_volumes();
    let mut vals = vec![0.0; mesh.ncells()];
    for iy in 0..ny {
        for ix in 0..nx {
            let xp = (ix + 1) % nx;
            let yp = (iy + 1) % ny;
            for k in 0..nk {
                let c = mesh.cell_id(ix, iy, k);
                let mut acc = 0.0;
                for (f, sign) in [
                    (mesh.x_face_id(xp, iy, k), 1.0),
                    (mesh.x_face_id(ix, iy, k), -1.0),
                    (mesh.y_face_id(ix, yp, k), 1.0),
                    (mesh.y_face_id(ix, iy, k), -1.0),
                    (mesh.z_face_id(ix, iy, k + 1), 1.0),
                    (mesh.z_face_id(ix, iy, k), -1.0),
                ] {
                    acc += sign * wv[f] * area[f] * (fv[f] - av[c]);
                }
                vals[c] = acc / vol[c];
            }
        }
    }
    Field::from_values(mesh, cell_space(mesh), vals)
}

/// Prognostic transport state over one nested level pair: dry density on the
/// fine mesh, tracer densities and mixing ratios on the coarse mesh, plus
/// the time-mean flux and wind of the latest dry step.
#[derive(Debug)]
pub struct TransportState {
    /// Fine-mesh dry density.
    pub rho: Field,
    /// Coarse tracer densities, the conserved quantities.
    pub tracer_density: Vec<Field>,
    /// Coarse mixing ratios `tracer_density / restrict(rho)`.
    pub mixing_ratio: Vec<Field>,
    /// Comparison tracers advanced in advective form (may be empty).
    pub advective_ratio: Vec<Field>,
    /// Time-mean fine mass flux of the latest dry step.
    pub mean_flux: Field,
    /// Time-mean fine wind of the latest dry step.
    pub mean_wind: Field,
    pub t: f64,
}

impl TransportState {
    /// Initialize from a fine dry density and coarse mixing ratios; the same
    /// ratios seed the advective comparison tracers when `advective` is set.
    pub fn new(p: &LevelPair, rho: Field, ratios: &[Field], advective: bool) -> Result<Self> {
        expect_cell_on(&rho, &p.fine)?;
        if !(rho.min() > 0.0) {
            return Err(Error::NonPositiveDensity { min: rho.min() });
        }
        let rho_bar = restrict_density(p, &rho)?;
        if !(rho_bar.min() > 0.0) {
            return Err(Error::NonPositiveDensity { min: rho_bar.min() });
        }
        let mut tracer_density = Vec::with_capacity(ratios.len());
        let mut mixing_ratio = Vec::with_capacity(ratios.len());
        for a in ratios {
            expect_cell_on(a, &p.coarse)?;
            tracer_density.push(a.mul_pointwise(&rho_bar)?);
            mixing_ratio.push(a.clone());
        }
        let advective_ratio = if advective { ratios.to_vec() } else { Vec::new() };
        Ok(Self {
            rho,
            tracer_density,
            mixing_ratio,
            advective_ratio,
            mean_flux: Field::zeros(&p.fine, SpaceTag::Vu)?,
            mean_wind: Field::zeros(&p.fine, SpaceTag::Vu)?,
            t: 0.0,
        })
    }

    /// One full step: fine dry density, then both tracer families against
    /// the flux that actually moved the density.
    pub fn step(
        &mut self,
        p: &LevelPair,
        wind_at: impl FnMut(f64) -> Result<Field>,
        dt: f64,
        cfg: &TransportConfig,
    ) -> Result<()> {
        let rho_bar_old = restrict_density(p, &self.rho)?;
        self.step_dry_density(p, wind_at, dt, cfg)?;
        self.step_coarse_tracer(p, &rho_bar_old, dt, cfg)?;
        self.step_coarse_tracer_advective(p, dt, cfg)?;
        self.t += dt;
        Ok(())
    }

    /// Advance the fine dry density through `cfg.substeps` flux-form substeps
    /// with `wind_at` sampled at each substep midpoint; leaves the time-mean
    /// mass flux and wind behind for the tracer updates. Substeps whose
    /// Courant number exceeds 1 are rejected, never clipped.
    pub fn step_dry_density(
        &mut self,
        p: &LevelPair,
        mut wind_at: impl FnMut(f64) -> Result<Field>,
        dt: f64,
        cfg: &TransportConfig,
    ) -> Result<()> {
        let n = cfg.n();
        let delta = dt / n as f64;
        let share = 1.0 / n as f64;
        self.mean_flux = Field::zeros(&p.fine, SpaceTag::Vu)?;
        self.mean_wind = Field::zeros(&p.fine, SpaceTag::Vu)?;
        for s in 0..n {
            let u = wind_at(self.t + (s as f64 + 0.5) * delta)?;
            expect_flux_on(&u, &p.fine)?;
            let c = max_courant(&u, delta)?;
            if c > 1.0 + 1e-12 {
                return Err(Error::CflViolation { courant: c * n as f64, substeps: n });
            }
            let flux = match cfg.scheme {
                FluxScheme::Upwind1 => flux_operator(&self.rho, &u, cfg.scheme)?,
                FluxScheme::LinearUpwind2 => {
                    let f1 = flux_operator(&self.rho, &u, cfg.scheme)?;
                    let mut star = self.rho.clone();
                    star.axpy(-delta, &divergence(&f1)?)?;
                    let f2 = flux_operator(&star, &u, cfg.scheme)?;
                    f1.add(&f2)?.scale(0.5)
                }
            };
            self.rho.axpy(-delta, &divergence(&flux)?)?;
            self.mean_flux.axpy(share, &flux)?;
            self.mean_wind.axpy(share, &u)?;
        }
        Ok(())
    }

    /// Advance the coarse tracer densities with the restricted time-mean
    /// mass flux, marching the coarse dry density alongside, then refresh the
    /// mixing ratios against the restriction of the updated fine density.
    pub fn step_coarse_tracer(
        &mut self,
        p: &LevelPair,
        rho_bar_old: &Field,
        dt: f64,
        cfg: &TransportConfig,
    ) -> Result<()> {
        if self.tracer_density.is_empty() {
            return Ok(());
        }
        let n = cfg.n();
        let delta = dt / n as f64;
        let fbar = restrict_wind(p, &self.mean_flux)?;
        let div_fbar = divergence(&fbar)?;
        let mut rho_d = rho_bar_old.clone();
        for _ in 0..n {
            let mut rho_d_next = rho_d.clone();
            rho_d_next.axpy(-delta, &div_fbar)?;
            for ry in &mut self.tracer_density {
                let a = ry.div_pointwise(&rho_d)?;
                let flux = match cfg.scheme {
                    FluxScheme::Upwind1 => flux_operator(&a, &fbar, cfg.scheme)?,
                    FluxScheme::LinearUpwind2 => {
                        let f1 = flux_operator(&a, &fbar, cfg.scheme)?;
                        let mut star = ry.clone();
                        star.axpy(-delta, &divergence(&f1)?)?;
                        let a_star = star.div_pointwise(&rho_d_next)?;
                        let f2 = flux_operator(&a_star, &fbar, cfg.scheme)?;
                        f1.add(&f2)?.scale(0.5)
                    }
                };
                ry.axpy(-delta, &divergence(&flux)?)?;
            }
            rho_d = rho_d_next;
        }
        let rho_bar_new = restrict_density(p, &self.rho)?;
        if !(rho_bar_new.min() > 0.0) {
            return Err(Error::NonPositiveDensity { min: rho_bar_new.min() });
        }
        for (a, ry) in self.mixing_ratio.iter_mut().zip(&self.tracer_density) {
            *a = ry.div_pointwise(&rho_bar_new)?;
        }
        Ok(())
    }

    /// Advance the comparison tracers in advective form against the
    /// restricted time-mean wind. Constants survive exactly; mass does not,
    /// which is the point of the comparison.
    pub fn step_coarse_tracer_advective(
        &mut self,
        p: &LevelPair,
        dt: f64,
        cfg: &TransportConfig,
    ) -> Result<()> {
        if self.advective_ratio.is_empty() {
            return Ok(());
        }
        let n = cfg.n();
        let delta = dt / n as f64;
        let ubar = restrict_wind(p, &self.mean_wind)?;
        for _ in 0..n {
            for a in &mut self.advective_ratio {
                let incr = match cfg.scheme {
                    FluxScheme::Upwind1 => advective_increment(a, &ubar, cfg.scheme)?,
                    FluxScheme::LinearUpwind2 => {
                        let i1 = advective_increment(a, &ubar, cfg.scheme)?;
                        let mut star = a.clone();
                        star.axpy(-delta, &i1)?;
                        let i2 = advective_increment(&star, &ubar, cfg.scheme)?;
                        i1.add(&i2)?.scale(0.5)
                    }
                };
                a.axpy(-delta, &incr)?;
            }
        }
        Ok(())
    }

    /// Coarse tracer mass per species, the conserved diagnostic.
    pub fn tracer_masses(&self) -> Result<Vec<f64>> {
        self.tracer_density.iter().map(|f| f.total_mass()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{HorizontalMesh, NestedMeshPair, Orography, VerticalGrid};
    use crate::testutil::{bump_pair, flat_pair, rng_for, uniform_field, wind_with_closed_boundaries};

    fn both_schemes() -> [TransportConfig; 2] {
        [
            TransportConfig { scheme: FluxScheme::Upwind1, substeps: 1 },
            TransportConfig { scheme: FluxScheme::LinearUpwind2, substeps: 2 },
        ]
    }

    #[test]
    fn uniform_flux_has_zero_divergence_on_flat_meshes() {
        let pair = flat_pair(4, 4, 2);
        let f = Field::constant(&pair.primary.fine, SpaceTag::Vu, 0.73).unwrap();
        let div = divergence(&f).unwrap();
        assert_eq!(div.min(), 0.0);
        assert_eq!(div.max(), 0.0);
    }

    #[test]
    fn unit_outflow_through_unit_faces_counts_faces() {
        let h = HorizontalMesh::new(3, 3, 3.0, 3.0).unwrap();
        let v = VerticalGrid::uniform(1, 0.0, 1.0).unwrap();
        let pair = NestedMeshPair::build(h, v, 3, &Orography::flat()).unwrap();
        let mesh = &pair.primary.fine;
        let mut f = Field::zeros(mesh, SpaceTag::Vu).unwrap();
        let (ix, iy, k) = (1, 1, 0);
        f.values_mut()[mesh.x_face_id(ix + 1, iy, k)] = 1.0;
        f.values_mut()[mesh.x_face_id(ix, iy, k)] = -1.0;
        f.values_mut()[mesh.y_face_id(ix, iy + 1, k)] = 1.0;
        f.values_mut()[mesh.y_face_id(ix, iy, k)] = -1.0;
        f.values_mut()[mesh.z_face_id(ix, iy, k + 1)] = 1.0;
        f.values_mut()[mesh.z_face_id(ix, iy, k)] = -1.0;
        let div = divergence(&f).unwrap();
        assert!((div.values()[mesh.cell_id(ix, iy, k)] - 6.0).abs() <= 1e-14);
    }

    #[test]
    fn divergence_telescopes_to_zero_total() {
        for pair in [flat_pair(8, 8, 3), bump_pair(8, 8, 3)] {
            let mesh = &pair.primary.fine;
            let mut rng = rng_for(61);
            let f = wind_with_closed_boundaries(mesh, -1.0, 1.0, &mut rng);
            let div = divergence(&f).unwrap();
            let total = div.total_mass().unwrap();
            assert!(total.abs() <= 1e-12 * mesh.ncells() as f64);
        }
    }

    #[test]
    fn restriction_commutes_with_divergence() {
        for pair in [flat_pair(8, 8, 2), bump_pair(8, 8, 2)] {
            let p = &pair.primary;
            let mut rng = rng_for(62);
            let f = wind_with_closed_boundaries(&p.fine, -1.0, 1.0, &mut rng);
            let lhs = restrict_density(p, &divergence(&f).unwrap()).unwrap();
            let rhs = divergence(&restrict_wind(p, &f).unwrap()).unwrap();
            assert!(lhs.linf_diff(&rhs).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn constant_ratio_flux_is_exactly_scaled_drive() {
        let pair = bump_pair(4, 4, 3);
        let mesh = &pair.primary.fine;
        let mut rng = rng_for(63);
        let drive = uniform_field(mesh, SpaceTag::Vu, -2.0, 2.0, &mut rng);
        let c = 0.731;
        let a = Field::constant(mesh, SpaceTag::Vrho, c).unwrap();
        for scheme in [FluxScheme::Upwind1, FluxScheme::LinearUpwind2] {
            let flux = flux_operator(&a, &drive, scheme).unwrap();
            for (f, d) in flux.values().iter().zip(drive.values()) {
                assert_eq!(*f, c * d);
            }
        }
    }

    #[test]
    fn upwind_takes_the_upstream_cell() {
        let pair = flat_pair(4, 4, 1);
        let mesh = &pair.primary.fine;
        let mut a = Field::constant(mesh, SpaceTag::Vrho, 3.0).unwrap();
        a.values_mut()[mesh.cell_id(1, 0, 0)] = 1.0; // left neighbour of face (2,0)
        let mut drive = Field::zeros(mesh, SpaceTag::Vu).unwrap();
        let face = mesh.x_face_id(2, 0, 0);
        drive.values_mut()[face] = 2.0;
        let flux = flux_operator(&a, &drive, FluxScheme::Upwind1).unwrap();
        assert_eq!(flux.values()[face], 2.0);
        drive.values_mut()[face] = -2.0;
        let flux = flux_operator(&a, &drive, FluxScheme::Upwind1).unwrap();
        assert_eq!(flux.values()[face], -6.0);
    }

    #[test]
    fn dry_step_conserves_mass_and_zero_wind_is_identity() {
        for pair in [flat_pair(8, 8, 2), bump_pair(8, 8, 2)] {
            for cfg in both_schemes() {
                let p = &pair.primary;
                let mut rng = rng_for(64);
                let rho0 = uniform_field(&p.fine, SpaceTag::Vrho, 0.5, 1.5, &mut rng);
                let half = Field::constant(&p.coarse, SpaceTag::Vrho, 0.5).unwrap();
                let mut state = TransportState::new(p, rho0.clone(), &[half], false).unwrap();
                let m0 = state.rho.total_mass().unwrap();

                // Zero wind first: bitwise no-op on the density.
                state
                    .step(p, |_| Field::zeros(&p.fine, SpaceTag::Vu), 10.0, &cfg)
                    .unwrap();
                assert_eq!(state.rho.linf_diff(&rho0).unwrap(), 0.0);

                // Then a random closed-boundary wind, scaled CFL-safe.
                for _ in 0..10 {
                    let mut rng_step = rng_for(65);
                    state
                        .step(
                            p,
                            |_| {
                                Ok(wind_with_closed_boundaries(&p.fine, -0.02, 0.02, &mut rng_step))
                            },
                            10.0,
                            &cfg,
                        )
                        .unwrap();
                }
                let m1 = state.rho.total_mass().unwrap();
                assert!((m1 - m0).abs() <= 1e-13 * m0.abs());
            }
        }
    }

    #[test]
    fn coarse_tracer_mass_is_conserved() {
        for pair in [flat_pair(8, 8, 2), bump_pair(8, 8, 2)] {
            for cfg in both_schemes() {
                let p = &pair.primary;
                let mut rng = rng_for(66);
                let rho0 = uniform_field(&p.fine, SpaceTag::Vrho, 0.8, 1.2, &mut rng);
                let a0 = uniform_field(&p.coarse, SpaceTag::Vrho, 0.1, 1.0, &mut rng);
                let mut state = TransportState::new(p, rho0, &[a0], false).unwrap();
                let m0 = state.tracer_masses().unwrap()[0];
                for _ in 0..10 {
                    state
                        .step(
                            p,
                            |_| Ok(wind_with_closed_boundaries(&p.fine, -0.02, 0.02, &mut rng)),
                            10.0,
                            &cfg,
                        )
                        .unwrap();
                }
                let m1 = state.tracer_masses().unwrap()[0];
                assert!((m1 - m0).abs() <= 1e-12 * m0.abs(), "{}", (m1 - m0) / m0);
            }
        }
    }

    #[test]
    fn constant_ratio_stays_constant_under_any_wind() {
        for pair in [flat_pair(8, 8, 2), bump_pair(8, 8, 2)] {
            for cfg in both_schemes() {
                let p = &pair.primary;
                let mut rng = rng_for(67);
                let rho0 = uniform_field(&p.fine, SpaceTag::Vrho, 0.8, 1.2, &mut rng);
                let half = Field::constant(&p.coarse, SpaceTag::Vrho, 0.5).unwrap();
                let mut state = TransportState::new(p, rho0, &[half], true).unwrap();
                for _ in 0..20 {
                    state
                        .step(
                            p,
                            |_| Ok(wind_with_closed_boundaries(&p.fine, -0.02, 0.02, &mut rng)),
                            10.0,
                            &cfg,
                        )
                        .unwrap();
                }
                let dev = (state.mixing_ratio[0].min() - 0.5)
                    .abs()
                    .max((state.mixing_ratio[0].max() - 0.5).abs());
                assert!(dev <= 1e-12, "consistency drift {dev}");
                // The advective form preserves constants bitwise.
                assert_eq!(state.advective_ratio[0].min(), 0.5);
                assert_eq!(state.advective_ratio[0].max(), 0.5);
            }
        }
    }

    #[test]
    fn shifted_level_pair_transports_conservatively() {
        let pair = bump_pair(8, 8, 2);
        let p = &pair.shifted;
        let mut rng = rng_for(68);
        let rho0 = uniform_field(&p.fine, SpaceTag::VrhoShifted, 0.8, 1.2, &mut rng);
        let a0 = uniform_field(&p.coarse, SpaceTag::VrhoShifted, 0.1, 1.0, &mut rng);
        let cfg = TransportConfig::default();
        let mut state = TransportState::new(p, rho0, &[a0], false).unwrap();
        let m0 = state.tracer_masses().unwrap()[0];
        for _ in 0..10 {
            state
                .step(p, |_| Ok(wind_with_closed_boundaries(&p.fine, -0.02, 0.02, &mut rng)), 10.0, &cfg)
                .unwrap();
        }
        let m1 = state.tracer_masses().unwrap()[0];
        assert!((m1 - m0).abs() <= 1e-12 * m0.abs());
    }

    #[test]
    fn excessive_courant_is_rejected() {
        let pair = flat_pair(4, 4, 1);
        let p = &pair.primary;
        let rho0 = Field::constant(&p.fine, SpaceTag::Vrho, 1.0).unwrap();
        let mut state = TransportState::new(p, rho0, &[], false).unwrap();
        let cfg = TransportConfig { scheme: FluxScheme::Upwind1, substeps: 2 };
        let res = state.step(
            p,
            |_| Field::constant(&p.fine, SpaceTag::Vu, 1e4),
            100.0,
            &cfg,
        );
        match res {
            Err(Error::CflViolation { courant, substeps }) => {
                assert_eq!(substeps, 2);
                assert!(courant > 2.0);
            }
            other => panic!("expected a CFL rejection, got {other:?}"),
        }
    }
}
