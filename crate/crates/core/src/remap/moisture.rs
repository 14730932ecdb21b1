//! Mapping of interface mixing ratios with mass conservation and a
//! nonnegativity guarantee.
//!
//! A mixing ratio `m` has no mass of its own; `m * rho_d` does. Both moves
//! therefore run through the vertically shifted twins: shift `m` and the dry
//! density, transfer the product as a density with the conserving cell
//! operators, divide by the target mesh's shifted dry density, and map back
//! to interfaces. All of that is wrapped in a [`MoistureMapper`] that fixes
//! the dry-density context once per exchange.
//!
//! Restriction and identification of bona fide fields clip the boundary
//! extrapolation at zero; increments use the linear mode so the maps stay
//! exactly linear and mass-neutral. The prolongation is blended per coarse
//! cell and level between the accurate-but-signed corrected reconstruction
//! and the nonnegative identification, with the smallest factor that clears
//! every negative child.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{Field, SpaceTag};
use crate::mesh::{ExtrudedMesh, LevelPair, NestedMeshPair};
use crate::remap::density::{identify_density, prolong_density, restrict_density};
use crate::remap::scalar::{parent_col, reconstruct_scalar};
use crate::remap::shift::{shift_density, shift_mixing_ratio, unshift_mixing_ratio, UnshiftMode};

/// What the positivity blend had to do during one mapping call.
#[derive(Debug, Clone, Copy, Default)]
pub struct LambdaReport {
    pub max_lambda: f64,
    /// Coarse (column, level) entries with a nonzero blending factor.
    pub triggered: usize,
}

/// Moisture operators bound to one dry-density exchange.
///
/// The context fixes the fine dry density actually present in the exchange:
/// built [`from_fine_density`](MoistureMapper::from_fine_density) when the
/// dynamics run fine (restriction direction first), or
/// [`from_coarse_density`](MoistureMapper::from_coarse_density) when the
/// dynamics run coarse, in which case the fine density is its conservative
/// prolongation. Holding both shifted densities fixed is what makes the
/// restrict/identify pair mutually inverse and mass-conserving to round-off.
pub struct MoistureMapper<'a> {
    pair: &'a NestedMeshPair,
    /// Shifted fine dry density: divisor on the fine side.
    q_fine: Field,
    /// Shifted coarse dry density: multiplier when identifying coarse fields.
    q_coarse: Field,
    /// Shifted restriction of the fine dry density: divisor on the coarse
    /// side. Equal to `q_coarse` bit-for-bit in the fine-density context and
    /// to round-off in the coarse-density context.
    q_restricted: Field,
}

fn expect_positive(f: &Field) -> Result<()> {
    let min = f.min();
    if !(min > 0.0) {
        return Err(Error::NonPositiveDensity { min });
    }
    Ok(())
}

fn expect_theta_on(m: &Field, mesh: &Arc<ExtrudedMesh>) -> Result<()> {
    if !Arc::ptr_eq(m.mesh(), mesh) {
        return Err(Error::MeshMismatch);
    }
    if m.space() != SpaceTag::Vtheta {
        return Err(Error::LayoutMismatch(format!(
            "moisture operators need Vtheta, got {}",
            m.space().name()
        )));
    }
    Ok(())
}

impl<'a> MoistureMapper<'a> {
    /// Context for exchanges anchored at a fine dry density (fine dynamics).
    pub fn from_fine_density(pair: &'a NestedMeshPair, rho_fine: &Field) -> Result<Self> {
        if !Arc::ptr_eq(rho_fine.mesh(), &pair.primary.fine) {
            return Err(Error::MeshMismatch);
        }
        expect_positive(rho_fine)?;
        let rho_coarse = restrict_density(&pair.primary, rho_fine)?;
        Self::assemble(pair, rho_fine, &rho_coarse)
    }

    /// Context for exchanges anchored at a coarse dry density (coarse
    /// dynamics); the fine density is its conservative prolongation, which
    /// must stay positive.
    pub fn from_coarse_density(pair: &'a NestedMeshPair, rho_coarse: &Field) -> Result<Self> {
        if !Arc::ptr_eq(rho_coarse.mesh(), &pair.primary.coarse) {
            return Err(Error::MeshMismatch);
        }
        expect_positive(rho_coarse)?;
        let rho_fine = prolong_density(&pair.primary, rho_coarse)?;
        expect_positive(&rho_fine)?;
        Self::assemble(pair, &rho_fine, rho_coarse)
    }

    fn assemble(pair: &'a NestedMeshPair, rho_fine: &Field, rho_coarse: &Field) -> Result<Self> {
        let q_fine = shift_density(rho_fine, &pair.shifted.fine)?;
        let q_coarse = shift_density(rho_coarse, &pair.shifted.coarse)?;
        let restricted = restrict_density(&pair.primary, rho_fine)?;
        let q_restricted = shift_density(&restricted, &pair.shifted.coarse)?;
        expect_positive(&q_fine)?;
        expect_positive(&q_coarse)?;
        expect_positive(&q_restricted)?;
        Ok(Self { pair, q_fine, q_coarse, q_restricted })
    }

    pub fn fine_shifted_density(&self) -> &Field {
        &self.q_fine
    }

    pub fn coarse_shifted_density(&self) -> &Field {
        &self.q_coarse
    }

    fn to_coarse(&self, m: &Field, mode: UnshiftMode) -> Result<Field> {
        expect_theta_on(m, &self.pair.primary.fine)?;
        let mt = shift_mixing_ratio(m, &self.pair.shifted.fine)?;
        let num = restrict_density(&self.pair.shifted, &mt.mul_pointwise(&self.q_fine)?)?;
        let quot = num.div_pointwise(&self.q_restricted)?;
        unshift_mixing_ratio(&quot, &self.pair.primary.coarse, mode)
    }

    fn to_fine(&self, m: &Field, mode: UnshiftMode) -> Result<Field> {
        expect_theta_on(m, &self.pair.primary.coarse)?;
        let mt = shift_mixing_ratio(m, &self.pair.shifted.coarse)?;
        let num = identify_density(&self.pair.shifted, &mt.mul_pointwise(&self.q_coarse)?)?;
        let quot = num.div_pointwise(&self.q_fine)?;
        unshift_mixing_ratio(&quot, &self.pair.primary.fine, mode)
    }

    /// Restrict a mixing-ratio field (clipped boundary extrapolation).
    pub fn restrict(&self, m: &Field) -> Result<Field> {
        self.to_coarse(m, UnshiftMode::ClipNegative)
    }

    /// Restrict an increment: exactly linear and mass-neutral, may be signed.
    pub fn restrict_increment(&self, d: &Field) -> Result<Field> {
        self.to_coarse(d, UnshiftMode::Linear)
    }

    /// Identify a coarse mixing-ratio field onto the fine mesh (clipped).
    pub fn identify(&self, m: &Field) -> Result<Field> {
        self.to_fine(m, UnshiftMode::ClipNegative)
    }

    /// Identify a coarse increment onto the fine mesh (linear).
    pub fn identify_increment(&self, d: &Field) -> Result<Field> {
        self.to_fine(d, UnshiftMode::Linear)
    }

    /// The corrected-reconstruction prolongation before any positivity
    /// treatment: accurate, conservative and exactly reversible, but signed.
    /// Used directly for increments and as the blend's accurate member.
    pub fn prolong_dagger(&self, m: &Field) -> Result<Field> {
        expect_theta_on(m, &self.pair.primary.coarse)?;
        let rec = reconstruct_scalar(&self.pair.primary, m)?;
        let corr = m.sub(&self.to_coarse(&rec, UnshiftMode::Linear)?)?;
        rec.add(&self.to_fine(&corr, UnshiftMode::Linear)?)
    }

    /// Positivity-safe prolongation of one field.
    pub fn prolong(&self, m: &Field) -> Result<(Field, LambdaReport)> {
        let (mut out, report) = self.prolong_multi(&[m])?;
        Ok((out.pop().expect("one input, one output"), report))
    }

    /// Positivity-safe prolongation of several species sharing one blending
    /// factor (the per-entry maximum over species), so linear correlations
    /// between species survive the blend.
    pub fn prolong_multi(&self, ms: &[&Field]) -> Result<(Vec<Field>, LambdaReport)> {
        let p = &self.pair.primary;
        let mut minus = Vec::with_capacity(ms.len());
        let mut plus = Vec::with_capacity(ms.len());
        for m in ms {
            minus.push(self.prolong_dagger(m)?);
            plus.push(self.to_fine(m, UnshiftMode::ClipNegative)?);
        }
        let mut lambda = Field::zeros(&p.coarse, SpaceTag::Vtheta)?;
        for (mi, pl) in minus.iter().zip(&plus) {
            let ls = compute_lambda(p, mi, pl)?;
            for (a, b) in lambda.values_mut().iter_mut().zip(ls.values()) {
                *a = a.max(*b);
            }
        }
        let report = LambdaReport {
            max_lambda: lambda.max().max(0.0),
            triggered: lambda.values().iter().filter(|&&v| v > 0.0).count(),
        };
        let mut out = Vec::with_capacity(ms.len());
        for (mi, pl) in minus.iter().zip(&plus) {
            out.push(blend_with_lambda(p, mi, pl, &lambda)?);
        }
        Ok((out, report))
    }
}

/// Smallest per-coarse-cell-and-level factor that blends away every negative
/// child of `m_minus` against the nonnegative `m_plus`.
pub fn compute_lambda(p: &LevelPair, m_minus: &Field, m_plus: &Field) -> Result<Field> {
    expect_theta_on(m_minus, &p.fine)?;
    expect_theta_on(m_plus, &p.fine)?;
    let nl = p.fine.nk() + 1;
    let mv = m_minus.values();
    let pv = m_plus.values();
    let mut vals = vec![0.0f64; p.coarse.ncols() * nl];
    for ccol in 0..p.coarse.ncols() {
        for &fcol in p.nesting.col_children_of(ccol) {
            for k in 0..nl {
                let i = fcol * nl + k;
                let (mi, pl) = (mv[i], pv[i]);
                if pl < 0.0 {
                    return Err(Error::NegativeGuard { value: pl, index: i });
                }
                if mi < 0.0 {
                    let den = pl - mi;
                    if den <= f64::MIN_POSITIVE {
                        return Err(Error::DegenerateLambda { index: i });
                    }
                    let lam = -mi / den;
                    let slot = &mut vals[ccol * nl + k];
                    *slot = (*slot).max(lam);
                }
            }
        }
    }
    Field::from_values(&p.coarse, SpaceTag::Vtheta, vals)
}

/// `(1 - lambda) * m_minus + lambda * m_plus`, the parent's factor applied to
/// all its children.
pub fn blend_with_lambda(
    p: &LevelPair,
    m_minus: &Field,
    m_plus: &Field,
    lambda: &Field,
) -> Result<Field> {
    expect_theta_on(m_minus, &p.fine)?;
    expect_theta_on(m_plus, &p.fine)?;
    expect_theta_on(lambda, &p.coarse)?;
    let nl = p.fine.nk() + 1;
    let mv = m_minus.values();
    let pv = m_plus.values();
    let lv = lambda.values();
    let mut vals = vec![0.0; mv.len()];
    for fcol in 0..p.fine.ncols() {
        let ccol = parent_col(p, fcol);
        for k in 0..nl {
            let lam = lv[ccol * nl + k];
            let i = fcol * nl + k;
            vals[i] = (1.0 - lam) * mv[i] + lam * pv[i];
        }
    }
    Field::from_values(&p.fine, SpaceTag::Vtheta, vals)
}

/// Moist mass per column that a mixing ratio represents: shift it to the
/// twin `q` lives on and integrate `M[m] * q` over each column.
pub fn shifted_moist_mass(m: &Field, q: &Field) -> Result<Vec<f64>> {
    let twin = q.mesh();
    if q.space() != SpaceTag::VrhoShifted {
        return Err(Error::LayoutMismatch(format!(
            "shifted dry density must be VrhoShifted, got {}",
            q.space().name()
        )));
    }
    let mt = shift_mixing_ratio(m, twin)?;
    let dens = mt.mul_pointwise(q)?;
    let nl = twin.nk();
    let mut out = vec![0.0; twin.ncols()];
    for col in 0..twin.ncols() {
        for k in 0..nl {
            let c = col * nl + k;
            out[col] += dens.values()[c] * twin.cell_volumes()[c];
        }
    }
    Ok(out)
}
