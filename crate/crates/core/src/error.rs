use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("unsupported objective: {0}")]
    UnsupportedObjective(String),

    #[error("invalid temperature {0}: must be positive")]
    InvalidTemperature(f64),

    #[error("control value {0} outside [0, 1]")]
    ControlRange(f64),

    #[error("invalid control {0}: must be positive")]
    InvalidControl(f64),

    #[error("invalid step size {0}")]
    InvalidStep(f64),

    #[error("time step {dt} exceeds the stability limit {limit}")]
    StepSize { dt: f64, limit: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("objective sup-norm is zero; the feedback control is undefined")]
    InvalidObjective,

    #[error("initial density already at quasi-equilibrium (H(0) = 0)")]
    DegenerateStart,

    #[error("diagnostics unreliable: {spill_fraction:.4} of the particles lie outside the grid")]
    UnreliableDiagnostics { spill_fraction: f64 },

    #[error("mass drift {0:e} exceeds tolerance")]
    MassDrift(f64),

    #[error("run aborted at t = {t}: {source}")]
    Aborted {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
