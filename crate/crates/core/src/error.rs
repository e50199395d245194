use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scale exponent {m} outside [0, {max}]")]
    ScaleOutOfRange { m: u32, max: u32 },

    #[error("scale mismatch: source m = {source_m}, target m = {target_m}")]
    ScaleMismatch { source_m: u32, target_m: u32 },

    #[error("cell index out of range at m = {m}: {detail}")]
    CellOutOfRange { m: u32, detail: String },

    #[error("incompatible scale: {0}")]
    IncompatibleScale(String),

    #[error("resampling exhausted after {attempts} attempts")]
    ResampleExhausted { attempts: usize },

    #[error("epsilon = {epsilon} too small for m = {m}: {detail}")]
    EpsilonTooSmall { epsilon: f64, m: u32, detail: String },

    #[error("two-ends guarantee violated: L = {length}, N = {kept} ({detail})")]
    GuaranteeViolation {
        length: f64,
        kept: usize,
        detail: String,
    },

    #[error("internal invariant failed: {0}")]
    InternalInvariant(String),

    #[error("step {step} claim violated: {detail}")]
    StepClaimViolation { step: u32, detail: String },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
