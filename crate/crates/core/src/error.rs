use thiserror::Error;

/// Errors produced by the identification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operator is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("expectation value has imaginary part {imag:.3e}")]
    ComplexExpectation { imag: f64 },

    #[error("invalid density state: {0}")]
    InvalidState(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trace drift {drift:.3e} at t = {time} ns exceeds tolerance")]
    TraceDrift { time: f64, drift: f64 },

    #[error("record has {len} samples, need at least {needed}")]
    RecordTooShort { len: usize, needed: usize },

    #[error("under-instrumented model: {observables} observables for {inputs} unknown inputs; recovering the inputs needs an output map of rank {inputs}, so at least {inputs} measured observables")]
    UnderInstrumented { observables: usize, inputs: usize },

    #[error("model is not invertible: {0}")]
    NotInvertible(String),

    #[error("readout matrix is singular at t = 0 (smallest singular value {smin:.3e} below {threshold:.3e})")]
    SingularStart { smin: f64, threshold: f64 },

    #[error("unrecoverable readout: all singular values vanish (largest {largest:.3e})")]
    Unrecoverable { largest: f64 },

    #[error("record does not match model: {0}")]
    RecordMismatch(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
