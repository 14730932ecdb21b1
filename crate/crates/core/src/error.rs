use thiserror::Error;

/// Failure modes surfaced by mesh construction, field algebra and the
/// mapping / transport / coupling operators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh construction: {0}")]
    MeshBuild(String),

    #[error("refinement factor {r} must be >= 2 and divide the fine cell counts {nx}x{ny}")]
    RefinementMismatch { r: usize, nx: usize, ny: usize },

    #[error("surface height {h} must satisfy 0 <= h < z_top = {z_top}")]
    OrographyOutOfRange { h: f64, z_top: f64 },

    #[error("field layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("fields live on different meshes")]
    MeshMismatch,

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("pointwise division by near-zero denominator at dof {index}")]
    DivisionByZero { index: usize },

    #[error("Courant number {courant:.6} exceeds what {substeps} substep(s) can carry")]
    CflViolation { courant: f64, substeps: usize },

    #[error("density must be strictly positive everywhere (min found {min:.6e})")]
    NonPositiveDensity { min: f64 },

    #[error("field guaranteed nonnegative has value {value:.6e} at dof {index}")]
    NegativeGuard { value: f64, index: usize },

    #[error("degenerate positivity factor: equal candidate values below zero at dof {index}")]
    DegenerateLambda { index: usize },

    #[error("physics input: {0}")]
    PhysicsInput(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
