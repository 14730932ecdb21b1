//! Flat key=value experiment configuration.
//!
//! One `key = value` pair per line, `#` starts a comment, unknown keys are
//! errors. Every key names a field of [`ExperimentConfig`]; command-line
//! flags override file values by assigning the same fields afterwards.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::transport::FluxScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Transport,
    TransportAdvective,
    PhysicsFine,
    PhysicsCoarse,
    Properties,
}

impl Experiment {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "transport" => Experiment::Transport,
            "transport-advective" => Experiment::TransportAdvective,
            "physics-fine" => Experiment::PhysicsFine,
            "physics-coarse" => Experiment::PhysicsCoarse,
            "properties" => Experiment::Properties,
            other => {
                return Err(Error::Config(format!(
                    "unknown experiment '{other}' (expected transport, transport-advective, \
                     physics-fine, physics-coarse or properties)"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Transport => "transport",
            Experiment::TransportAdvective => "transport-advective",
            Experiment::PhysicsFine => "physics-fine",
            Experiment::PhysicsCoarse => "physics-coarse",
            Experiment::Properties => "properties",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrographyKind {
    Flat,
    Bump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindProfile {
    /// Reversing deformational vortex pair scaled to Courant 0.5.
    Deformational,
    /// No flow at all; transports must be exact no-ops.
    Still,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Fine,
    Coarse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhysicsKind {
    Condensation,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialCondition {
    /// Smooth supersaturated blob with a uniform cloud deck.
    Blob,
    /// Checkerboard cloud holes under aggressive evaporation.
    Holes,
}

/// Everything an experiment run needs, with desk-scale defaults.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Fine-mesh cell counts; the coarse mesh divides them by `refinement`.
    pub nx: usize,
    pub ny: usize,
    pub refinement: usize,
    pub nk: usize,
    /// Step length (s) and total simulated time (s); `tau / dt` must be whole.
    pub dt: f64,
    pub tau: f64,
    pub scheme: FluxScheme,
    pub substeps: usize,
    pub lx: f64,
    pub ly: f64,
    pub z_top: f64,
    pub orography: OrographyKind,
    pub wind: WindProfile,
    /// Carry the advective comparison tracers alongside the conservative ones.
    pub advective: bool,
    /// Which mesh the physics runs on; `None` follows the experiment name.
    pub physics_placement: Option<Placement>,
    pub physics: PhysicsKind,
    pub initial: InitialCondition,
    pub seed: u64,
    /// Output directory for CSV diagnostics and field dumps.
    pub out: PathBuf,
    /// Test hook: corrupt the density-restriction weights so the property
    /// suite must report a conservation failure.
    pub fault: bool,
}

impl ExperimentConfig {
    pub fn for_experiment(experiment: Experiment) -> Self {
        Self {
            experiment,
            nx: 64,
            ny: 64,
            refinement: 2,
            nk: 1,
            dt: 4.0,
            tau: 2000.0,
            scheme: FluxScheme::LinearUpwind2,
            substeps: 1,
            lx: 1000.0,
            ly: 1000.0,
            z_top: 1000.0,
            orography: OrographyKind::Flat,
            wind: WindProfile::Deformational,
            advective: false,
            physics_placement: None,
            physics: PhysicsKind::Condensation,
            initial: InitialCondition::Blob,
            seed: 0,
            out: PathBuf::from("out"),
            fault: false,
        }
    }

    /// Parse a config file over these values; later lines override earlier.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Assign one field by key name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => self.experiment = Experiment::parse(value)?,
            "nx" => self.nx = parse_num(key, value)?,
            "ny" => self.ny = parse_num(key, value)?,
            "refinement" => self.refinement = parse_num(key, value)?,
            "nk" => self.nk = parse_num(key, value)?,
            "dt" => self.dt = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "scheme" => {
                self.scheme = match value {
                    "upwind" => FluxScheme::Upwind1,
                    "linear-upwind" => FluxScheme::LinearUpwind2,
                    other => {
                        return Err(Error::Config(format!(
                            "scheme '{other}' (expected upwind or linear-upwind)"
                        )))
                    }
                }
            }
            "substeps" => self.substeps = parse_num(key, value)?,
            "lx" => self.lx = parse_num(key, value)?,
            "ly" => self.ly = parse_num(key, value)?,
            "z_top" => self.z_top = parse_num(key, value)?,
            "orography" => {
                self.orography = match value {
                    "flat" => OrographyKind::Flat,
                    "bump" => OrographyKind::Bump,
                    other => {
                        return Err(Error::Config(format!(
                            "orography '{other}' (expected flat or bump)"
                        )))
                    }
                }
            }
            "wind" => {
                self.wind = match value {
                    "deformational" => WindProfile::Deformational,
                    "none" => WindProfile::Still,
                    other => {
                        return Err(Error::Config(format!(
                            "wind '{other}' (expected deformational or none)"
                        )))
                    }
                }
            }
            "advective" => self.advective = parse_bool(key, value)?,
            "physics_placement" => {
                self.physics_placement = Some(match value {
                    "fine" => Placement::Fine,
                    "coarse" => Placement::Coarse,
                    other => {
                        return Err(Error::Config(format!(
                            "physics_placement '{other}' (expected fine or coarse)"
                        )))
                    }
                })
            }
            "physics" => {
                self.physics = match value {
                    "condensation" => PhysicsKind::Condensation,
                    "identity" => PhysicsKind::Identity,
                    other => {
                        return Err(Error::Config(format!(
                            "physics '{other}' (expected condensation or identity)"
                        )))
                    }
                }
            }
            "initial" => {
                self.initial = match value {
                    "blob" => InitialCondition::Blob,
                    "holes" => InitialCondition::Holes,
                    other => {
                        return Err(Error::Config(format!(
                            "initial '{other}' (expected blob or holes)"
                        )))
                    }
                }
            }
            "seed" => self.seed = parse_num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "fault" => self.fault = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Whole number of steps in `tau`, validated by [`validate`](Self::validate).
    pub fn steps(&self) -> usize {
        (self.tau / self.dt).round() as usize
    }

    /// Which mesh the physics runs on for the physics experiments.
    pub fn placement(&self) -> Placement {
        self.physics_placement.unwrap_or(match self.experiment {
            Experiment::PhysicsCoarse => Placement::Coarse,
            _ => Placement::Fine,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.nx == 0 || self.ny == 0 || self.nk == 0 {
            return err("nx, ny and nk must be positive".into());
        }
        if self.refinement < 2 {
            return err(format!("refinement {} must be at least 2", self.refinement));
        }
        if self.nx % self.refinement != 0 || self.ny % self.refinement != 0 {
            return err(format!(
                "refinement {} must divide nx = {} and ny = {}",
                self.refinement, self.nx, self.ny
            ));
        }
        if !(self.dt > 0.0) || !(self.tau > 0.0) {
            return err("dt and tau must be positive".into());
        }
        let steps = self.tau / self.dt;
        if steps < 1.0 - 1e-9 || (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return err(format!("tau/dt = {steps} must be a whole number of steps"));
        }
        if self.substeps == 0 {
            return err("substeps must be at least 1".into());
        }
        if !(self.lx > 0.0 && self.ly > 0.0 && self.z_top > 0.0) {
            return err("lx, ly and z_top must be positive".into());
        }
        let physics = matches!(
            self.experiment,
            Experiment::PhysicsFine | Experiment::PhysicsCoarse
        );
        if physics && self.nk < 4 {
            return err(format!("physics experiments need nk >= 4, got {}", self.nk));
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected true or false, got '{other}'"))),
    }
}
