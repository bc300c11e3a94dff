use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid structure spec: {0}")]
    InvalidSpec(String),

    #[error("structure matrix L is rank deficient (smallest/largest singular value {ratio:e})")]
    StructuralRank { ratio: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("ill-conditioned Gram matrix (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("degenerate gamma1, gamma2: {0}")]
    DegenerateGammas(String),

    #[error("s-rho weights need a consistency constant b0")]
    MissingConstant,

    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),

    #[error("degenerate scale: delta2 = {0:e}")]
    DegenerateScale(f64),

    #[error("root finding failed: {0}")]
    RootFind(String),

    #[error("jacobian is not homogeneous of order zero (|J x| = {residual:e}, bound {bound:e})")]
    NotOrderZero { residual: f64, bound: f64 },

    #[error("sampling is only supported for the Gaussian generator")]
    UnsupportedSampler,

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("iterate left the PDS cone after {0} step halvings")]
    PdsCone(usize),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("too many failed replicates: {failed} of {replicates}")]
    ReplicateFailures { failed: usize, replicates: usize },

    #[error("{path}:{line}: {message}")]
    Data {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
