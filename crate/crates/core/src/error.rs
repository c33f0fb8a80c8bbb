use thiserror::Error;

pub type Result<T> = std::result::Result<T, LodError>;

#[derive(Debug, Error)]
pub enum LodError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid coefficient on cell {cell}: {reason}")]
    InvalidCoefficient { cell: usize, reason: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("interpolation construction failed at coarse {entity}: {reason}")]
    Construction { entity: String, reason: String },
    #[error("patch resonance for element {cell} with m = {m}: {reason}")]
    PatchResonance { cell: usize, m: usize, reason: String },
    #[error("resonant frequency: {0}")]
    Resonance(String),
    #[error("LOD resonance: coarse system is singular (smallest singular value {sigma_min:.3e})")]
    LodResonance { sigma_min: f64 },
    #[error("size cap exceeded: {what} has {size} unknowns, cap is {cap}")]
    CapExceeded { what: String, size: usize, cap: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LodError {
    /// Failures of the numerics (as opposed to bad input).
    pub fn is_computational(&self) -> bool {
        matches!(
            self,
            LodError::Construction { .. }
                | LodError::PatchResonance { .. }
                | LodError::Resonance(_)
                | LodError::LodResonance { .. }
        )
    }
}
