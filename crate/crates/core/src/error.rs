use thiserror::Error;

/// Errors raised by model construction and the spectral pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("truncation degree {0} is too small (need l_max >= 2)")]
    TruncationTooSmall(usize),

    #[error("degenerate torus lattice: |det| = {det:e}")]
    DegenerateLattice { det: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error(
        "metric not positive: min conformal factor {min_value:e} at node {node}; \
         the ray t*phi is admissible only for t in ({t_lo:e}, {t_hi:e})"
    )]
    NotPositive {
        min_value: f64,
        node: usize,
        t_lo: f64,
        t_hi: f64,
    },

    #[error("mass matrix is not positive definite (broken quadrature?)")]
    MassNotPositiveDefinite,

    #[error("requested {requested} eigenpairs but the basis only has {available}")]
    TooManyEigenpairs { requested: usize, available: usize },

    #[error("eigenvalue index {index} is out of range (have {available})")]
    IndexOutOfRange { index: usize, available: usize },

    #[error(
        "cluster around index {index} touches the untrusted tail \
         (lambda = {lambda}, trusted below {trusted_below}); increase L_max"
    )]
    UntrustedCluster {
        index: usize,
        lambda: f64,
        trusted_below: f64,
    },

    #[error("function is not in the cluster span (projection residual {residual:e})")]
    NotInClusterSpan { residual: f64 },

    #[error("no admissible finite-difference step above {floor:e}")]
    InadmissibleStep { floor: f64 },

    #[error("model is not the normalized Kähler-Einstein sphere: lambda_1 = {lambda1}")]
    NotEinsteinSphere { lambda1: f64 },

    #[error("identity {identity} violated: residual {residual:e} > {tol:e}")]
    IdentityViolated {
        identity: &'static str,
        residual: f64,
        tol: f64,
    },

    #[error("requested product depth exceeds the trusted range (needs {needed}, trusted below {trusted_below})")]
    DepthExceedsTrust { needed: f64, trusted_below: f64 },

    #[error("lift refused: lambda_1 of the second factor ({second}) is below lambda_1 of the first ({first})")]
    LiftRefused { first: f64, second: f64 },

    #[error("certificate has no extracted functions")]
    EmptyCertificate,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Failures of the numerical-trust kind (as opposed to violated
    /// preconditions or bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::MassNotPositiveDefinite
                | Error::UntrustedCluster { .. }
                | Error::DepthExceedsTrust { .. }
                | Error::IdentityViolated { .. }
                | Error::InadmissibleStep { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
