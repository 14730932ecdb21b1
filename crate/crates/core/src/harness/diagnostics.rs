//! Per-step CSV diagnostics and property-check records.
//!
//! Floats are written with Rust's shortest round-trip `Display`, so the same
//! run always produces byte-identical files. One header line, one row per
//! record, comma separated, no quoting anywhere.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::Result;

/// One transport step: masses, ratio bounds and the constant-tracer drift.
#[derive(Debug, Clone)]
pub struct TransportRow {
    pub t: f64,
    /// Fine-mesh dry mass.
    pub dry_mass: f64,
    /// Coarse tracer mass per species.
    pub tracer_mass: Vec<f64>,
    /// Bounds over every conservative mixing ratio.
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `max |a - 0.5|` for the constant species.
    pub constancy_dev: f64,
    /// Mass and constancy drift of the advective comparison tracers.
    pub advective_mass: Option<f64>,
    pub advective_constancy_dev: Option<f64>,
}

/// One physics coupling call: moist mass, moisture floors, theta range and
/// the running count of positivity-blend activations.
#[derive(Debug, Clone)]
pub struct PhysicsRow {
    pub t: f64,
    pub moist_mass: f64,
    pub min_vapour: f64,
    pub min_cloud: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub lambda_triggered: usize,
}

/// One property check: the worst observed value against its tolerance.
/// `pass` is stored rather than derived because a few checks invert the
/// comparison (a drift that must be present, an order that must be large).
#[derive(Debug, Clone)]
pub struct PropertyOutcome {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl PropertyOutcome {
    /// The usual case: `worst` must not exceed `tolerance`.
    pub fn at_most(name: &str, worst: f64, tolerance: f64) -> Self {
        Self { name: name.into(), worst, tolerance, pass: worst <= tolerance }
    }

    /// Inverted case: `worst` must reach at least `tolerance`.
    pub fn at_least(name: &str, worst: f64, tolerance: f64) -> Self {
        Self { name: name.into(), worst, tolerance, pass: worst >= tolerance }
    }
}

fn num(x: f64) -> String {
    // `Display` prints shortest-round-trip decimals without an exponent; the
    // values here never get large enough for that to be unreadable.
    format!("{x}")
}

pub fn write_transport_csv(path: &Path, rows: &[TransportRow]) -> Result<()> {
    let species = rows.first().map_or(0, |r| r.tracer_mass.len());
    let advective = rows.first().is_some_and(|r| r.advective_mass.is_some());
    let mut text = String::from("t,dry_mass");
    for s in 0..species {
        write!(text, ",tracer_mass_{s}").expect("string write");
    }
    text.push_str(",min_ratio,max_ratio,constancy_dev");
    if advective {
        text.push_str(",advective_mass,advective_constancy_dev");
    }
    text.push('\n');
    for r in rows {
        write!(text, "{},{}", num(r.t), num(r.dry_mass)).expect("string write");
        for m in &r.tracer_mass {
            write!(text, ",{}", num(*m)).expect("string write");
        }
        write!(
            text,
            ",{},{},{}",
            num(r.min_ratio),
            num(r.max_ratio),
            num(r.constancy_dev)
        )
        .expect("string write");
        if let (Some(am), Some(ac)) = (r.advective_mass, r.advective_constancy_dev) {
            write!(text, ",{},{}", num(am), num(ac)).expect("string write");
        }
        text.push('\n');
    }
    write_file(path, &text)
}

pub fn write_physics_csv(path: &Path, rows: &[PhysicsRow]) -> Result<()> {
    let mut text =
        String::from("t,moist_mass,min_vapour,min_cloud,theta_min,theta_max,lambda_triggered\n");
    for r in rows {
        writeln!(
            text,
            "{},{},{},{},{},{},{}",
            num(r.t),
            num(r.moist_mass),
            num(r.min_vapour),
            num(r.min_cloud),
            num(r.theta_min),
            num(r.theta_max),
            r.lambda_triggered
        )
        .expect("string write");
    }
    write_file(path, &text)
}

pub fn write_properties_csv(path: &Path, outcomes: &[PropertyOutcome]) -> Result<()> {
    let mut text = String::from("name,worst,tolerance,pass\n");
    for o in outcomes {
        writeln!(
            text,
            "{},{},{},{}",
            o.name,
            num(o.worst),
            num(o.tolerance),
            if o.pass { "pass" } else { "fail" }
        )
        .expect("string write");
    }
    write_file(path, &text)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}
