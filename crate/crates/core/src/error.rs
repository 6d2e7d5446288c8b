use thiserror::Error;

#[derive(Debug, Error)]
pub enum KnotError {
    #[error("N < 8 (got {0} samples)")]
    TooFewSamples(usize),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("malformed curve file: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("mean tangent vanishes")]
    MeanTangentVanishes,
    #[error("no good endpoints at this scale ({0})")]
    NoGoodEndpoints(String),
    #[error("seminorm too concentrated; use concentration pipeline")]
    SeminormTooConcentrated,
    #[error("concentration too sharp for grid; increase N")]
    ConcentrationTooSharp,
    #[error("distortion hypothesis violated at y = {0:?}")]
    DistortionHypothesis([f64; 3]),
    #[error("point lies on the curve")]
    OnCurve,
    #[error("flow collided with M at step {0}")]
    FlowCollision(usize),
    #[error("not embedded: samples {0} and {1} coincide")]
    NotEmbedded(usize, usize),
    #[error("certificate failed at iteration {0}: hausdorff budget violated")]
    CertificateFailed(usize),
}

pub type Result<T> = std::result::Result<T, KnotError>;
