use thiserror::Error;

/// Failures raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e}, scale {scale:e})")]
    NonSymmetric { asymmetry: f64, scale: f64 },

    #[error("symmetric eigensolver did not converge")]
    NoConvergence,

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e}, threshold {threshold:e})")]
    NotPsd { eigenvalue: f64, threshold: f64 },

    #[error("matrix is singular to working precision (pivot {pivot:e}, floor {floor:e})")]
    Singular { pivot: f64, floor: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("ellipticity violated: a11({x}) = {value} < lambda0 = {lambda0}")]
    EllipticityViolated { x: f64, value: f64, lambda0: f64 },

    #[error("meshes use different boundary conditions")]
    MismatchedBc,

    #[error("white noise has no pointwise covariance kernel")]
    NoPointwiseKernel,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("squared Hilbert-Schmidt distance is negative ({value:e}, leading term {leading:e})")]
    NegativeSquare { value: f64, leading: f64 },

    #[error("Cholesky factorisation failed even with jitter {jitter:e}")]
    CholeskyFailure { jitter: f64 },

    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),

    #[error("rate fit needs at least two positive (h, err) pairs, got {0}")]
    DegenerateFit(usize),

    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
