use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("simulation fault at t={t:.3}s: non-finite {what}")]
    NonFinite { t: f64, what: &'static str },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("trace too short: {samples} samples, need at least {required}")]
    TraceTooShort { samples: usize, required: usize },
    #[error("non-uniform sampling in force trace at sample {0}")]
    NonUniformSampling(usize),
    #[error("degenerate spectrum: no energy outside the DC bin")]
    DegenerateSpectrum,
    #[error("no spectral bins within {window} Hz of {center} Hz")]
    EmptyWindow { center: f64, window: f64 },
    #[error("high/low ratio undefined: zero energy below {cutoff} Hz")]
    RatioUndefined { cutoff: f64 },
    #[error("time-per-target undefined: no flags collected")]
    NoFlagsCollected,
    #[error("trial log is marked invalid")]
    InvalidTrial,
    #[error("cannot aggregate an empty group")]
    EmptyGroup,
    #[error("spectra do not share a bin grid")]
    GridMismatch,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnovaError {
    #[error("design error: {0}")]
    Design(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
}
