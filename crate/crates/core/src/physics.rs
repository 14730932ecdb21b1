//! Toy saturation-adjustment physics and the two increment-coupling
//! workflows between a dynamics mesh and a physics mesh at the other
//! resolution.
//!
//! The coupling contract is the same in both directions: prognostic fields
//! are mapped to the physics mesh, the scheme runs there, and only its
//! increments travel back. Fields use the clipped, positivity-safe maps;
//! increments use the exactly linear ones, so a zero increment leaves the
//! dynamics state bit-for-bit unchanged and moist column mass is conserved.
//! When the physics runs coarse, the returned moisture increment is blended
//! against an identification of the updated coarse field, with one blending
//! factor shared by all species, so fine-scale structure the coarse mesh
//! cannot see (cloud holes, fronts) never produces negative moisture.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{Field, SpaceTag};
use crate::mesh::{ExtrudedMesh, NestedMeshPair};
use crate::remap::{
    blend_with_lambda, compute_lambda, prolong_scalar, restrict_scalar, LambdaReport,
    MoistureMapper,
};

/// Saturation-curve and latent-heat constants for the adjustment scheme.
#[derive(Debug, Clone, Copy)]
pub struct PhysicsParams {
    /// Latent heat of condensation (J / kg).
    pub latent_heat: f64,
    /// Heat capacity at constant pressure (J / (kg K)).
    pub heat_capacity: f64,
    /// Fraction of the saturation excess removed per call, in (0, 1].
    pub adjustment_fraction: f64,
    /// Saturation mixing ratio at the surface at the reference temperature.
    pub sat_surface: f64,
    /// E-folding height of the saturation curve (m).
    pub sat_scale_height: f64,
    /// Linearised temperature slope of the saturation curve (1 / K).
    pub sat_theta_coeff: f64,
    /// Reference potential temperature (K).
    pub theta_ref: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            latent_heat: 2.5e6,
            heat_capacity: 1004.0,
            adjustment_fraction: 0.5,
            sat_surface: 0.02,
            sat_scale_height: 3000.0,
            sat_theta_coeff: 3.0e-4,
            theta_ref: 300.0,
        }
    }
}

impl PhysicsParams {
    fn validate(&self) -> Result<()> {
        let positives = [
            self.latent_heat,
            self.heat_capacity,
            self.sat_surface,
            self.sat_scale_height,
            self.sat_theta_coeff,
            self.theta_ref,
        ];
        if positives.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::PhysicsInput("parameters must be finite and positive".into()));
        }
        if !(self.adjustment_fraction > 0.0 && self.adjustment_fraction <= 1.0) {
            return Err(Error::PhysicsInput(format!(
                "adjustment fraction {} outside (0, 1]",
                self.adjustment_fraction
            )));
        }
        Ok(())
    }

    /// Prescribed saturation mixing ratio: exponential decay with height,
    /// linear dependence on potential temperature.
    pub fn saturation(&self, z: f64, theta: f64) -> f64 {
        self.sat_surface
            * (-z / self.sat_scale_height).exp()
            * (1.0 + self.sat_theta_coeff * (theta - self.theta_ref))
    }
}

/// Height of the interface-level dof at the centre of column `(ix, iy)`,
/// the mean of its four corner vertex heights.
pub fn theta_level_height(mesh: &ExtrudedMesh, ix: usize, iy: usize, k: usize) -> f64 {
    let xp = (ix + 1) % mesh.nx();
    let yp = (iy + 1) % mesh.ny();
    0.25 * (mesh.vertex_height(ix, iy, k)
        + mesh.vertex_height(xp, iy, k)
        + mesh.vertex_height(ix, yp, k)
        + mesh.vertex_height(xp, yp, k))
}

/// Pointwise scalar increments produced by one physics call.
#[derive(Debug, Clone)]
pub struct PhysicsIncrement {
    pub dtheta: Field,
    pub dvapour: Field,
    pub dcloud: Field,
}

/// The physics options the coupling accepts. `Identity` produces exactly
/// zero increments and exists so steady-state behaviour is testable.
#[derive(Debug, Clone)]
pub enum PhysicsScheme {
    Identity,
    Condensation(PhysicsParams),
}

impl PhysicsScheme {
    pub fn increments(
        &self,
        theta: &Field,
        vapour: &Field,
        cloud: &Field,
    ) -> Result<PhysicsIncrement> {
        match self {
            PhysicsScheme::Identity => Ok(PhysicsIncrement {
                dtheta: Field::zeros(theta.mesh(), SpaceTag::Vtheta)?,
                dvapour: Field::zeros(theta.mesh(), SpaceTag::Vtheta)?,
                dcloud: Field::zeros(theta.mesh(), SpaceTag::Vtheta)?,
            }),
            PhysicsScheme::Condensation(p) => saturation_adjustment(theta, vapour, cloud, p),
        }
    }
}

fn expect_theta_triple(theta: &Field, vapour: &Field, cloud: &Field) -> Result<()> {
    for f in [theta, vapour, cloud] {
        if !Arc::ptr_eq(f.mesh(), theta.mesh()) {
            return Err(Error::MeshMismatch);
        }
        if f.space() != SpaceTag::Vtheta {
            return Err(Error::LayoutMismatch(format!(
                "physics needs Vtheta fields, got {}",
                f.space().name()
            )));
        }
    }
    Ok(())
}

fn expect_nearly_nonnegative(f: &Field, what: &str) -> Result<()> {
    let min = f.min();
    if min < -1e-12 {
        return Err(Error::PhysicsInput(format!("{what} has negative value {min:.3e}")));
    }
    Ok(())
}

/// Relaxation toward the saturation curve with latent-heat feedback.
///
/// Where vapour exceeds saturation, a fraction of the excess condenses,
/// warming the level; where it falls short and cloud is present, the deficit
/// evaporates but never more cloud than exists, cooling it. Vapour and cloud
/// therefore stay nonnegative on the mesh the scheme runs on, and the two
/// moisture increments cancel pointwise.
pub fn saturation_adjustment(
    theta: &Field,
    vapour: &Field,
    cloud: &Field,
    params: &PhysicsParams,
) -> Result<PhysicsIncrement> {
    params.validate()?;
    expect_theta_triple(theta, vapour, cloud)?;
    expect_nearly_nonnegative(vapour, "vapour")?;
    expect_nearly_nonnegative(cloud, "cloud")?;
    let mesh = theta.mesh();
    let (nx, ny, nl) = (mesh.nx(), mesh.ny(), mesh.nk() + 1);
    let heat = params.latent_heat / params.heat_capacity;
    let mut dtheta = vec![0.0; theta.len()];
    let mut dvapour = vec![0.0; theta.len()];
    let mut dcloud = vec![0.0; theta.len()];
    for iy in 0..ny {
        for ix in 0..nx {
            let col = iy * nx + ix;
            for k in 0..nl {
                let dof = col * nl + k;
                let th = theta.values()[dof];
                let msat = params.saturation(theta_level_height(mesh, ix, iy, k), th);
                if !(msat > 0.0) {
                    return Err(Error::PhysicsInput(format!(
                        "saturation curve nonpositive ({msat:.3e}) at dof {dof}"
                    )));
                }
                let mv = vapour.values()[dof];
                let mc = cloud.values()[dof];
                if mv > msat {
                    let d = params.adjustment_fraction * (mv - msat);
                    dvapour[dof] = -d;
                    dcloud[dof] = d;
                    dtheta[dof] = heat * d;
                } else if mv < msat && mc > 0.0 {
                    let d = (params.adjustment_fraction * (msat - mv)).min(mc);
                    dvapour[dof] = d;
                    dcloud[dof] = -d;
                    dtheta[dof] = -heat * d;
                }
            }
        }
    }
    Ok(PhysicsIncrement {
        dtheta: Field::from_values(mesh, SpaceTag::Vtheta, dtheta)?,
        dvapour: Field::from_values(mesh, SpaceTag::Vtheta, dvapour)?,
        dcloud: Field::from_values(mesh, SpaceTag::Vtheta, dcloud)?,
    })
}

/// Prognostic thermodynamic state carried on the dynamics mesh.
#[derive(Debug, Clone)]
pub struct MoistState {
    /// Potential temperature, interface-level.
    pub theta: Field,
    /// Vapour mixing ratio, interface-level.
    pub vapour: Field,
    /// Cloud-condensate mixing ratio, interface-level.
    pub cloud: Field,
    /// Dry density, cell-level; fixed across a physics call.
    pub rho: Field,
}

impl MoistState {
    fn expect_on(&self, mesh: &Arc<ExtrudedMesh>) -> Result<()> {
        for (f, want) in [
            (&self.theta, SpaceTag::Vtheta),
            (&self.vapour, SpaceTag::Vtheta),
            (&self.cloud, SpaceTag::Vtheta),
            (&self.rho, SpaceTag::Vrho),
        ] {
            if !Arc::ptr_eq(f.mesh(), mesh) {
                return Err(Error::MeshMismatch);
            }
            if f.space() != want {
                return Err(Error::LayoutMismatch(format!(
                    "state field in {}, expected {}",
                    f.space().name(),
                    want.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapDirection {
    ToFine,
    ToCoarse,
}

/// What a mapping call carried: `Field` means prognostic state moving toward
/// the physics mesh before the scheme runs; `Increment` means anything moved
/// while applying the scheme's output afterwards, including the updated-field
/// identification that backs the positivity blend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapPayload {
    Field,
    Increment,
}

#[derive(Debug, Clone)]
pub struct MapEvent {
    pub direction: MapDirection,
    pub payload: MapPayload,
    pub name: &'static str,
}

/// Instrumentation accumulated across coupling calls: the full mapping event
/// sequence plus the positivity-blend activity.
#[derive(Debug, Clone, Default)]
pub struct CouplingReport {
    pub events: Vec<MapEvent>,
    pub max_lambda: f64,
    /// Coarse (column, level) entries that needed a nonzero blend, summed
    /// over calls.
    pub lambda_triggered: usize,
}

impl CouplingReport {
    fn absorb(&mut self, r: &LambdaReport) {
        self.max_lambda = self.max_lambda.max(r.max_lambda);
        self.lambda_triggered += r.triggered;
    }
}

/// True when no prognostic-field mapping follows an increment mapping.
pub fn fields_precede_increments(events: &[MapEvent]) -> bool {
    let mut seen_increment = false;
    for e in events {
        match e.payload {
            MapPayload::Increment => seen_increment = true,
            MapPayload::Field => {
                if seen_increment {
                    return false;
                }
            }
        }
    }
    true
}

fn ev(direction: MapDirection, payload: MapPayload, name: &'static str) -> MapEvent {
    MapEvent { direction, payload, name }
}

/// Physics on the fine mesh, dynamics state on the coarse mesh: prolong the
/// prognostics, run the scheme, restrict its increments linearly.
pub fn apply_physics_fine(
    pair: &NestedMeshPair,
    state: &mut MoistState,
    scheme: &PhysicsScheme,
    report: &mut CouplingReport,
) -> Result<()> {
    state.expect_on(&pair.primary.coarse)?;
    let mapper = MoistureMapper::from_coarse_density(pair, &state.rho)?;
    let mut events = Vec::with_capacity(6);

    let theta_f = prolong_scalar(&pair.primary, &state.theta)?;
    events.push(ev(MapDirection::ToFine, MapPayload::Field, "theta"));
    let (mut moist, lam) = mapper.prolong_multi(&[&state.vapour, &state.cloud])?;
    events.push(ev(MapDirection::ToFine, MapPayload::Field, "vapour"));
    events.push(ev(MapDirection::ToFine, MapPayload::Field, "cloud"));
    report.absorb(&lam);
    let cloud_f = moist.pop().expect("two species in, two out");
    let vapour_f = moist.pop().expect("two species in, two out");

    let inc = scheme.increments(&theta_f, &vapour_f, &cloud_f)?;

    let dtheta = restrict_scalar(&pair.primary, &inc.dtheta)?;
    events.push(ev(MapDirection::ToCoarse, MapPayload::Increment, "theta-increment"));
    let dvapour = mapper.restrict_increment(&inc.dvapour)?;
    events.push(ev(MapDirection::ToCoarse, MapPayload::Increment, "vapour-increment"));
    let dcloud = mapper.restrict_increment(&inc.dcloud)?;
    events.push(ev(MapDirection::ToCoarse, MapPayload::Increment, "cloud-increment"));

    state.theta = state.theta.add(&dtheta)?;
    state.vapour = state.vapour.add(&dvapour)?;
    state.cloud = state.cloud.add(&dcloud)?;
    debug_assert!(state.vapour.min() >= -1e-12, "vapour went negative");
    debug_assert!(state.cloud.min() >= -1e-12, "cloud went negative");

    debug_assert!(fields_precede_increments(&events));
    report.events.extend(events);
    Ok(())
}

/// Physics on the coarse mesh, dynamics state on the fine mesh: restrict the
/// prognostics, run the scheme, prolong the increments back. The moisture
/// update blends the accurate incremented field against an identification of
/// the updated coarse field with one shared factor, keeping every species
/// nonnegative without breaking their linear correlations.
pub fn apply_physics_coarse(
    pair: &NestedMeshPair,
    state: &mut MoistState,
    scheme: &PhysicsScheme,
    report: &mut CouplingReport,
) -> Result<()> {
    state.expect_on(&pair.primary.fine)?;
    let p = &pair.primary;
    let mapper = MoistureMapper::from_fine_density(pair, &state.rho)?;
    let mut events = Vec::with_capacity(8);

    let theta_c = restrict_scalar(p, &state.theta)?;
    events.push(ev(MapDirection::ToCoarse, MapPayload::Field, "theta"));
    let vapour_c = mapper.restrict(&state.vapour)?;
    events.push(ev(MapDirection::ToCoarse, MapPayload::Field, "vapour"));
    let cloud_c = mapper.restrict(&state.cloud)?;
    events.push(ev(MapDirection::ToCoarse, MapPayload::Field, "cloud"));

    let inc = scheme.increments(&theta_c, &vapour_c, &cloud_c)?;

    state.theta = state.theta.add(&prolong_scalar(p, &inc.dtheta)?)?;
    events.push(ev(MapDirection::ToFine, MapPayload::Increment, "theta-increment"));

    // Accurate candidate: state plus the reversible prolonged increment.
    let vapour_acc = state.vapour.add(&mapper.prolong_dagger(&inc.dvapour)?)?;
    events.push(ev(MapDirection::ToFine, MapPayload::Increment, "vapour-increment"));
    let cloud_acc = state.cloud.add(&mapper.prolong_dagger(&inc.dcloud)?)?;
    events.push(ev(MapDirection::ToFine, MapPayload::Increment, "cloud-increment"));

    // Safe candidate: the updated coarse field identified onto the children,
    // nonnegative by construction and carrying the same column mass.
    let vapour_safe = mapper.identify(&vapour_c.add(&inc.dvapour)?)?;
    events.push(ev(MapDirection::ToFine, MapPayload::Increment, "vapour-updated-identification"));
    let cloud_safe = mapper.identify(&cloud_c.add(&inc.dcloud)?)?;
    events.push(ev(MapDirection::ToFine, MapPayload::Increment, "cloud-updated-identification"));

    let mut lambda = compute_lambda(p, &vapour_acc, &vapour_safe)?;
    let lam_cloud = compute_lambda(p, &cloud_acc, &cloud_safe)?;
    for (a, b) in lambda.values_mut().iter_mut().zip(lam_cloud.values()) {
        *a = a.max(*b);
    }
    report.absorb(&LambdaReport {
        max_lambda: lambda.max().max(0.0),
        triggered: lambda.values().iter().filter(|&&v| v > 0.0).count(),
    });

    state.vapour = blend_with_lambda(p, &vapour_acc, &vapour_safe, &lambda)?;
    state.cloud = blend_with_lambda(p, &cloud_acc, &cloud_safe, &lambda)?;
    debug_assert!(state.vapour.min() >= -1e-12, "vapour went negative");
    debug_assert!(state.cloud.min() >= -1e-12, "cloud went negative");

    debug_assert!(fields_precede_increments(&events));
    report.events.extend(events);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::remap::{shift_density, shifted_moist_mass};
    use crate::testutil::{bump_pair, column_density, flat_pair, rng_for};
    use rand::Rng;

    fn theta_field(mesh: &Arc<ExtrudedMesh>, value: f64) -> Field {
        Field::constant(mesh, SpaceTag::Vtheta, value).unwrap()
    }

    /// `m_sat(z, theta)` evaluated dof by dof.
    fn saturation_field(mesh: &Arc<ExtrudedMesh>, theta: &Field, p: &PhysicsParams) -> Field {
        let (nx, nl) = (mesh.nx(), mesh.nk() + 1);
        Field::from_fn(mesh, SpaceTag::Vtheta, |dof| {
            let (col, k) = (dof / nl, dof % nl);
            let (ix, iy) = (col % nx, col / nx);
            p.saturation(theta_level_height(mesh, ix, iy, k), theta.values()[dof])
        })
        .unwrap()
    }

    #[test]
    fn saturated_equilibrium_produces_no_increment() {
        let pair = bump_pair(4, 4, 4);
        let mesh = &pair.primary.fine;
        let p = PhysicsParams::default();
        let theta = theta_field(mesh, 300.0);
        let vapour = saturation_field(mesh, &theta, &p);
        let cloud = Field::zeros(mesh, SpaceTag::Vtheta).unwrap();
        let inc = saturation_adjustment(&theta, &vapour, &cloud, &p).unwrap();
        for f in [&inc.dtheta, &inc.dvapour, &inc.dcloud] {
            assert_eq!(f.min(), 0.0);
            assert_eq!(f.max(), 0.0);
        }
    }

    #[test]
    fn supersaturation_condenses_the_programmed_fraction() {
        let pair = flat_pair(4, 4, 4);
        let mesh = &pair.primary.fine;
        let p = PhysicsParams { adjustment_fraction: 1.0, ..PhysicsParams::default() };
        let theta = theta_field(mesh, 300.0);
        let excess = 0.002;
        let mut vapour = saturation_field(mesh, &theta, &p);
        for v in vapour.values_mut() {
            *v += excess;
        }
        let cloud = Field::zeros(mesh, SpaceTag::Vtheta).unwrap();
        let inc = saturation_adjustment(&theta, &vapour, &cloud, &p).unwrap();
        let heat = p.latent_heat / p.heat_capacity;
        for dof in 0..inc.dcloud.len() {
            assert!((inc.dcloud.values()[dof] - excess).abs() <= 1e-16);
            assert!((inc.dvapour.values()[dof] + excess).abs() <= 1e-16);
            assert!((inc.dtheta.values()[dof] - heat * excess).abs() <= 1e-11);
        }
    }

    #[test]
    fn subsaturation_without_cloud_does_nothing() {
        let pair = flat_pair(4, 4, 2);
        let mesh = &pair.primary.fine;
        let p = PhysicsParams::default();
        let theta = theta_field(mesh, 300.0);
        let vapour = saturation_field(mesh, &theta, &p).scale(0.5);
        let cloud = Field::zeros(mesh, SpaceTag::Vtheta).unwrap();
        let inc = saturation_adjustment(&theta, &vapour, &cloud, &p).unwrap();
        assert_eq!(inc.dtheta.min(), 0.0);
        assert_eq!(inc.dtheta.max(), 0.0);
    }

    #[test]
    fn evaporation_never_consumes_more_cloud_than_exists() {
        let pair = flat_pair(4, 4, 2);
        let mesh = &pair.primary.fine;
        let p = PhysicsParams { adjustment_fraction: 1.0, ..PhysicsParams::default() };
        let theta = theta_field(mesh, 300.0);
        let vapour = saturation_field(mesh, &theta, &p).scale(0.1);
        let tiny = 1e-5;
        let cloud = Field::constant(mesh, SpaceTag::Vtheta, tiny).unwrap();
        let inc = saturation_adjustment(&theta, &vapour, &cloud, &p).unwrap();
        // The deficit dwarfs the cloud, so exactly all of it evaporates.
        assert_eq!(inc.dcloud.min(), -tiny);
        assert_eq!(inc.dcloud.max(), -tiny);
        assert_eq!(inc.dvapour.min(), tiny);
    }

    #[test]
    fn clearly_negative_moisture_is_rejected() {
        let pair = flat_pair(4, 4, 2);
        let mesh = &pair.primary.fine;
        let p = PhysicsParams::default();
        let theta = theta_field(mesh, 300.0);
        let mut vapour = saturation_field(mesh, &theta, &p);
        vapour.values_mut()[3] = -1e-9;
        let cloud = Field::zeros(mesh, SpaceTag::Vtheta).unwrap();
        assert!(matches!(
            saturation_adjustment(&theta, &vapour, &cloud, &p),
            Err(Error::PhysicsInput(_))
        ));
    }

    /// Random states whose smooth vertical structure keeps every mapping
    /// clip-free: nonnegative with ranges bounded by a factor of two, and
    /// constant in the vertical except through the saturation curve.
    fn coarse_state(pair: &NestedMeshPair, seed: u64) -> MoistState {
        let mesh = &pair.primary.coarse;
        let mut rng = rng_for(seed);
        let p = PhysicsParams::default();
        let theta = theta_field(mesh, 300.0);
        let msat = saturation_field(mesh, &theta, &p);
        let nl = mesh.nk() + 1;
        let env: Vec<f64> = (0..mesh.ncols()).map(|_| rng.gen_range(0.7..1.3)).collect();
        let vapour = Field::from_fn(mesh, SpaceTag::Vtheta, |dof| {
            env[dof / nl] * msat.values()[dof]
        })
        .unwrap();
        let cval: Vec<f64> = (0..mesh.ncols()).map(|_| rng.gen_range(0.004..0.006)).collect();
        let cloud = Field::from_fn(mesh, SpaceTag::Vtheta, |dof| cval[dof / nl]).unwrap();
        let rho = column_density(mesh, 0.8, 1.2, &mut rng);
        MoistState { theta, vapour, cloud, rho }
    }

    fn fine_state(pair: &NestedMeshPair, seed: u64) -> MoistState {
        let mesh = &pair.primary.fine;
        let mut rng = rng_for(seed);
        let p = PhysicsParams::default();
        let theta = theta_field(mesh, 300.0);
        let msat = saturation_field(mesh, &theta, &p);
        let nl = mesh.nk() + 1;
        let env: Vec<f64> = (0..mesh.ncols()).map(|_| rng.gen_range(0.7..1.3)).collect();
        let vapour = Field::from_fn(mesh, SpaceTag::Vtheta, |dof| {
            env[dof / nl] * msat.values()[dof]
        })
        .unwrap();
        let cval: Vec<f64> = (0..mesh.ncols()).map(|_| rng.gen_range(0.004..0.006)).collect();
        let cloud = Field::from_fn(mesh, SpaceTag::Vtheta, |dof| cval[dof / nl]).unwrap();
        let rho = column_density(mesh, 0.8, 1.2, &mut rng);
        MoistState { theta, vapour, cloud, rho }
    }

    #[test]
    fn identity_physics_is_an_exact_steady_state_both_placements() {
        let pair = bump_pair(8, 8, 4);
        let mut report = CouplingReport::default();

        let mut state = coarse_state(&pair, 81);
        let before = state.clone();
        for _ in 0..3 {
            apply_physics_fine(&pair, &mut state, &PhysicsScheme::Identity, &mut report).unwrap();
        }
        assert_eq!(state.theta.linf_diff(&before.theta).unwrap(), 0.0);
        assert_eq!(state.vapour.linf_diff(&before.vapour).unwrap(), 0.0);
        assert_eq!(state.cloud.linf_diff(&before.cloud).unwrap(), 0.0);

        let mut state = fine_state(&pair, 82);
        let before = state.clone();
        for _ in 0..3 {
            apply_physics_coarse(&pair, &mut state, &PhysicsScheme::Identity, &mut report)
                .unwrap();
        }
        assert_eq!(state.theta.linf_diff(&before.theta).unwrap(), 0.0);
        assert_eq!(state.vapour.linf_diff(&before.vapour).unwrap(), 0.0);
        assert_eq!(state.cloud.linf_diff(&before.cloud).unwrap(), 0.0);
    }

    /// Moist mass per coarse column carried by a coarse-mesh state.
    fn coarse_column_masses(pair: &NestedMeshPair, s: &MoistState) -> Vec<f64> {
        let q = shift_density(&s.rho, &pair.shifted.coarse).unwrap();
        let total = s.vapour.add(&s.cloud).unwrap();
        shifted_moist_mass(&total, &q).unwrap()
    }

    /// Moist mass per coarse column carried by a fine-mesh state.
    fn fine_column_masses(pair: &NestedMeshPair, s: &MoistState) -> Vec<f64> {
        let q = shift_density(&s.rho, &pair.shifted.fine).unwrap();
        let total = s.vapour.add(&s.cloud).unwrap();
        let per_fine = shifted_moist_mass(&total, &q).unwrap();
        let fine = &pair.primary.fine;
        let coarse = &pair.primary.coarse;
        let r = pair.r;
        let mut out = vec![0.0; coarse.ncols()];
        for fy in 0..fine.ny() {
            for fx in 0..fine.nx() {
                out[(fy / r) * coarse.nx() + fx / r] += per_fine[fy * fine.nx() + fx];
            }
        }
        out
    }

    #[test]
    fn condensation_conserves_moist_column_mass_both_placements() {
        let pair = bump_pair(8, 8, 4);
        let scheme = PhysicsScheme::Condensation(PhysicsParams {
            adjustment_fraction: 0.25,
            ..PhysicsParams::default()
        });
        let mut report = CouplingReport::default();

        let mut state = coarse_state(&pair, 83);
        let before = coarse_column_masses(&pair, &state);
        for _ in 0..5 {
            apply_physics_fine(&pair, &mut state, &scheme, &mut report).unwrap();
        }
        let after = coarse_column_masses(&pair, &state);
        for (b, a) in before.iter().zip(&after) {
            assert!((a - b).abs() <= 1e-12 * b.abs(), "fine placement drift {}", (a - b) / b);
        }

        let mut state = fine_state(&pair, 84);
        let before = fine_column_masses(&pair, &state);
        for _ in 0..5 {
            apply_physics_coarse(&pair, &mut state, &scheme, &mut report).unwrap();
        }
        let after = fine_column_masses(&pair, &state);
        for (b, a) in before.iter().zip(&after) {
            assert!((a - b).abs() <= 1e-12 * b.abs(), "coarse placement drift {}", (a - b) / b);
        }
    }

    #[test]
    fn condensation_moves_mass_between_vapour_and_cloud() {
        let pair = flat_pair(8, 8, 4);
        let p = PhysicsParams { adjustment_fraction: 1.0, ..PhysicsParams::default() };
        let scheme = PhysicsScheme::Condensation(p);
        let mut report = CouplingReport::default();
        let mut state = coarse_state(&pair, 85);
        let cloud_before = state.cloud.clone();
        apply_physics_fine(&pair, &mut state, &scheme, &mut report).unwrap();
        // The 0.7..1.3 envelope straddles saturation, so something condensed.
        assert!(state.cloud.linf_diff(&cloud_before).unwrap() > 1e-6);
        assert!(state.vapour.min() >= -1e-13);
        assert!(state.cloud.min() >= -1e-13);
    }

    #[test]
    fn cloud_holes_trigger_the_blend_and_stay_nonnegative() {
        let pair = flat_pair(8, 8, 4);
        let mesh = &pair.primary.fine;
        let p = PhysicsParams { adjustment_fraction: 1.0, ..PhysicsParams::default() };
        let theta = theta_field(mesh, 300.0);
        // Far below saturation so evaporation wants to eat all the cloud.
        let vapour = saturation_field(mesh, &theta, &p).scale(0.2);
        let nl = mesh.nk() + 1;
        let nx = mesh.nx();
        let cloud = Field::from_fn(mesh, SpaceTag::Vtheta, |dof| {
            let col = dof / nl;
            if (col % nx + col / nx) % 2 == 0 {
                0.004
            } else {
                0.0
            }
        })
        .unwrap();
        let mut rng = rng_for(86);
        let rho = column_density(mesh, 0.8, 1.2, &mut rng);
        let mut state = MoistState { theta, vapour, cloud, rho };
        let before = fine_column_masses(&pair, &state);
        let mut report = CouplingReport::default();
        apply_physics_coarse(&pair, &mut state, &PhysicsScheme::Condensation(p), &mut report)
            .unwrap();
        assert!(report.lambda_triggered > 0, "holes must activate the blend");
        assert!(state.cloud.min() >= -1e-13);
        assert!(state.vapour.min() >= -1e-13);
        let after = fine_column_masses(&pair, &state);
        for (b, a) in before.iter().zip(&after) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn correlated_species_survive_the_identity_round_trip() {
        let pair = flat_pair(8, 8, 4);
        let mut state = fine_state(&pair, 87);
        // Tie cloud to vapour linearly; the shared blend must not break this.
        state.cloud = state.vapour.scale(2.0);
        for c in state.cloud.values_mut() {
            *c += 0.1;
        }
        let mut report = CouplingReport::default();
        apply_physics_coarse(&pair, &mut state, &PhysicsScheme::Identity, &mut report).unwrap();
        let rebuilt = state.vapour.scale(2.0);
        let worst = state
            .cloud
            .values()
            .iter()
            .zip(rebuilt.values())
            .map(|(c, v)| (c - (v + 0.1)).abs())
            .fold(0.0f64, f64::max);
        assert!(worst <= 1e-12, "correlation drift {worst}");
    }

    #[test]
    fn mapping_events_order_fields_before_increments() {
        let pair = flat_pair(8, 8, 4);
        let scheme = PhysicsScheme::Condensation(PhysicsParams::default());

        let mut report = CouplingReport::default();
        let mut state = coarse_state(&pair, 88);
        apply_physics_fine(&pair, &mut state, &scheme, &mut report).unwrap();
        assert_eq!(report.events.len(), 6);
        assert!(fields_precede_increments(&report.events));
        assert!(report.events.iter().take(3).all(|e| e.direction == MapDirection::ToFine));
        assert!(report.events.iter().skip(3).all(|e| e.direction == MapDirection::ToCoarse));

        let mut report = CouplingReport::default();
        let mut state = fine_state(&pair, 89);
        apply_physics_coarse(&pair, &mut state, &scheme, &mut report).unwrap();
        assert_eq!(report.events.len(), 8);
        assert!(fields_precede_increments(&report.events));
        assert!(report.events.iter().take(3).all(|e| e.direction == MapDirection::ToCoarse));
        assert!(report.events.iter().skip(3).all(|e| e.direction == MapDirection::ToFine));
    }
}
