use thiserror::Error;

/// Everything that can go wrong inside the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The noise coefficient `g` is (numerically) zero, so `f/g` is undefined.
    #[error("noise coefficient vanishes at x = {x}: |g| = {g_abs:e} is below the singularity threshold {threshold:e}")]
    SingularNoiseCoefficient { x: f64, g_abs: f64, threshold: f64 },

    /// `1 + (2 mu2 / mu1) g (f/g)'` went negative: the correlation time is too
    /// large for the weak-colour expansion at this state.
    #[error("weak-colour expansion breaks down at x = {x}: diffusion radicand k2 = {k2:e} < 0")]
    NegativeRadicand { x: f64, k2: f64 },

    #[error("non-finite value in {what} (x = {x})")]
    NonFinite { what: &'static str, x: f64 },

    #[error("unstable step size: {detail}")]
    Stability { detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("histogram grid covers only {covered} of {total} samples (need at least 99.9%)")]
    Coverage { covered: usize, total: usize },

    #[error("grids differ: {0}")]
    GridMismatch(String),

    #[error("unknown preset {0}; presets are numbered 1 to 4")]
    UnknownPreset(u8),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run {run}: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
