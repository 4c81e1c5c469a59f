use crate::image::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("pixel {index} has value {value}; raw pixels must lie in [0, 1]")]
    PixelOutOfRange { index: usize, value: f64 },

    #[error("normalization epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),

    #[error("image pixel {index} = {value} is outside (0, 1]")]
    NotNormalized { index: usize, value: f64 },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: Shape, found: Shape },

    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },

    #[error("gamma ({gamma}) must satisfy gamma < T ({steps})")]
    GammaNotBelowSteps { gamma: f64, steps: usize },

    #[error("gamma ({gamma}) must be at least 10x the largest pixel value ({max_pixel})")]
    GammaTooSmall { gamma: f64, max_pixel: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("step {step} is outside the valid range {min}..={max}")]
    StepOutOfRange { step: usize, min: usize, max: usize },

    #[error("scale value {value} at pixel {index} is outside (0, 1)")]
    ScaleOutOfRange { index: usize, value: f64 },

    #[error("retention coefficient {0} is outside (0, 1]")]
    InvalidRetention(f64),

    #[error("SNR undefined/infinite at t={0}; t must be positive")]
    NonPositiveTime(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("alpha_bar underflows at step {step}; inversion is ill-conditioned")]
    Underflow { step: usize },

    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    Divergence { iteration: usize, loss: f64 },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by rejected inputs or configuration rather than
    /// by runtime failures.
    pub fn is_rejection(&self) -> bool {
        !matches!(
            self,
            Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Divergence { .. }
                | Error::Underflow { .. }
                | Error::Format { .. }
        )
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
