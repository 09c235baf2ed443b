use thiserror::Error;

/// Everything that can go wrong while building states or evaluating amplitudes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScatterError {
    #[error("invalid time point {0}: must be finite and non-negative")]
    InvalidTime(f64),

    #[error("invalid bandwidth {0}: must be finite and strictly positive")]
    InvalidBandwidth(f64),

    #[error("profile norm {norm} deviates from 1 by more than {tolerance}")]
    Unnormalized { norm: f64, tolerance: f64 },

    #[error("truncation horizon {t_max} too short: retained norm {retained} < 1 - {tolerance}")]
    HorizonTooShort { t_max: f64, retained: f64, tolerance: f64 },

    #[error("sampled grid must be strictly increasing with at least two nodes")]
    BadGrid,

    #[error("invalid kernel span [{a}, {b}]")]
    InvalidSpan { a: f64, b: f64 },

    #[error("emission times must be strictly increasing and non-negative")]
    UnsortedTimes,

    #[error("expected {expected} photons/excitations, found {found}")]
    PhotonCount { expected: usize, found: usize },

    #[error("component index {n_right} out of range for {n_photons} photons")]
    ComponentOutOfRange { n_right: usize, n_photons: usize },

    #[error("initial-state amplitudes have |c_g|^2 + |c_e|^2 = {0}")]
    StateNorm(f64),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("quadrature did not converge after {subdivisions} subdivisions (estimated error {estimate:e})")]
    NoConvergence { subdivisions: usize, estimate: f64 },

    #[error("invalid quadrature settings: {0}")]
    BadQuadrature(String),

    #[error("non-uniform time grid: {0}")]
    NonUniformGrid(String),

    #[error("aliasing/truncation check failed: {0}")]
    Aliasing(String),

    #[error("spectral integration support too small: tail estimate {0:e}")]
    SupportTruncated(f64),
}

pub type Result<T> = std::result::Result<T, ScatterError>;
