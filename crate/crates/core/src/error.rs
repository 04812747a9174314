use thiserror::Error;

/// Errors raised by the calibration pipeline.
#[derive(Debug, Error)]
pub enum CalibError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("singular projection matrix: {0}")]
    SingularMatrix(String),

    #[error("point projects to infinity (w' = {w})")]
    AtInfinity { w: f64 },

    #[error("invalid orbit: {0}")]
    InvalidOrbit(String),

    #[error("projection denominator vanishes at view {view} (phi = {phi} rad)")]
    VanishingDenominator { view: usize, phi: f64 },

    #[error("invalid track: {0}")]
    InvalidTrack(String),

    #[error("degenerate component: moment determinant is zero")]
    DegenerateComponent,

    #[error("track carries no perspective information (both moment determinants vanish)")]
    NoPerspectiveInformation,

    #[error("rank-deficient initialization: {0}")]
    RankDeficient(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("aspect ratio not correctable with gamma = 0 (radicand {radicand})")]
    AspectNotCorrectable { radicand: f64 },

    #[error("gamma/delta optimizer did not converge: {0}")]
    OptimizerFailed(String),

    #[error("gauge normalization failed: {0}")]
    Gauge(String),

    #[error("scenario sampling failed: {0}")]
    Sampling(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{}: {source}", path.display())]
    File { path: std::path::PathBuf, source: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CalibError>;
