use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("invalid input: {0}")]
    Contract(String),

    #[error("complete or quasi-complete separation in {model} model (max |linear predictor| = {max_eta:.1})")]
    Separation { model: &'static str, max_eta: f64 },

    #[error("{model} model did not converge after {iterations} iterations (score norm {score_norm:.3e})")]
    NonConvergence {
        model: &'static str,
        iterations: usize,
        score_norm: f64,
        last: Vec<f64>,
    },

    #[error("degenerate denominator for class {class}: |sum| = {value:.3e}")]
    DegenerateDenominator { class: usize, value: f64 },

    #[error("degenerate VUS denominator: |sum| = {0:.3e}")]
    DegenerateVusDenominator(f64),

    #[error("degenerate class prevalence: theta = ({0:.3e}, {1:.3e}, {2:.3e})")]
    DegenerateTheta(f64, f64, f64),

    #[error("singular bread matrix (condition number {condition:.3e})")]
    SingularBread { condition: f64 },

    #[error("singular covariance matrix")]
    SingularCovariance,

    #[error("quadrature failed to reach tolerance {tolerance:e}")]
    Quadrature { tolerance: f64 },

    #[error("all {0} bootstrap replicates failed")]
    AllReplicatesFailed(usize),

    #[error("internal consistency failure: {0}")]
    Internal(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numerics of the data (as opposed to
    /// malformed input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Separation { .. }
                | Error::NonConvergence { .. }
                | Error::DegenerateDenominator { .. }
                | Error::DegenerateVusDenominator(_)
                | Error::DegenerateTheta(..)
                | Error::SingularBread { .. }
                | Error::SingularCovariance
                | Error::Quadrature { .. }
                | Error::AllReplicatesFailed(_)
                | Error::Internal(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
