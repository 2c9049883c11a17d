use thiserror::Error;

pub type Result<T> = std::result::Result<T, MlrError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MlrError {
    #[error("linear system is numerically singular (pivot {pivot:.3e} at column {column})")]
    SingularSystem { column: usize, pivot: f64 },

    #[error("quadrature did not reach tolerance after {subdivisions} subdivisions (error estimate {error:.3e})")]
    NoConvergence { subdivisions: usize, error: f64 },

    #[error("kernel `{0}` is not quadratically minorizable; IRLS requires a QM kernel")]
    NotQuadraticallyMinorizable(&'static str),

    #[error("every observation has zero minorizer weight; no kernel mass near the current parameter")]
    EmptySupport,

    #[error("all {0} starts failed")]
    AllStartsFailed(usize),

    #[error("Hessian-type matrix is not negative definite; check the declared model")]
    NotNegativeDefinite,

    #[error("asymptotic bias vanishes; optimal bandwidth is undefined")]
    ZeroBias,

    #[error("{failed} of {trials} trials failed for kernel {kernel} at n = {n}")]
    ExperimentFailed {
        kernel: &'static str,
        n: usize,
        failed: usize,
        trials: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
