//! Modal linear regression: kernels, the IRLS estimator, asymptotic
//! bandwidth selection and a seeded simulation harness.

pub mod asymptotics;
pub mod error;
pub mod estimator;
pub mod kernels;
pub mod numerics;
pub mod simulation;

pub use asymptotics::{amse, optimal_bandwidth, oracle_quantities, ConditionalDensityModel, OracleQuantities};
pub use error::{MlrError, Result};
pub use estimator::{fit, fit_multistart, objective, Dataset, FitConfig, FitResult, Termination};
pub use kernels::{Kernel, QmStatus};
pub use simulation::{run_experiment, DgpSpec, ExperimentConfig, ExperimentRow};
