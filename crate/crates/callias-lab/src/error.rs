use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("operator is not Hermitian: deviation {deviation:.3e} exceeds {tolerance:.3e}")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("spectral gap too small: {context} (gap {gap:.3e}, required {required:.3e})")]
    GapFailure {
        context: String,
        gap: f64,
        required: f64,
    },

    #[error("refinement budget exhausted after {evaluations} path evaluations")]
    RefinementBudget { evaluations: usize },

    #[error("window too small or kappa too large: {0}")]
    WindowTooSmall(String),

    #[error("ambiguous kernel classification: {0}")]
    AmbiguousKernel(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
