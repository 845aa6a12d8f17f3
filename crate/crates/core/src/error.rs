use thiserror::Error;

/// Errors raised by estimation, design and simulation routines.
#[derive(Debug, Error)]
pub enum SkewError {
    #[error("population is empty")]
    EmptyPopulation,

    #[error("cdf has no positive mass")]
    EmptyCdf,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("probability {0} outside the admissible range")]
    InvalidProbability(f64),

    #[error("degenerate population: mean absolute deviation about the median is zero")]
    DegeneratePopulation,

    #[error("degenerate quantile spread at r = {r}: upper and lower quantiles coincide")]
    DegenerateSpread { r: f64 },

    #[error("cannot form {requested} strata from {available} distinct x values")]
    InvalidStrata { requested: usize, available: usize },

    #[error("allocation failed: {0}")]
    Allocation(String),

    #[error("calibration constraints are collinear (condition estimate {condition:.3e})")]
    Collinear { condition: f64 },

    #[error("calibration infeasible: population mean of x lies outside the sample range")]
    CalibrationInfeasible,

    #[error("calibration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("density estimate at r = {r} is degenerate (zero-length Woodruff interval)")]
    DensityDegenerate { r: f64 },

    #[error("enumeration of {count} samples exceeds the bound of {bound}")]
    CombinatorialBound { count: f64, bound: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SkewError {
    /// Stable machine-readable tag, used for JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            SkewError::EmptyPopulation => "empty_population",
            SkewError::EmptyCdf => "empty_cdf",
            SkewError::InvalidInput(_) => "invalid_input",
            SkewError::InvalidProbability(_) => "invalid_probability",
            SkewError::DegeneratePopulation => "degenerate_population",
            SkewError::DegenerateSpread { .. } => "degenerate_spread",
            SkewError::InvalidStrata { .. } => "invalid_strata",
            SkewError::Allocation(_) => "allocation",
            SkewError::Collinear { .. } => "collinear",
            SkewError::CalibrationInfeasible => "calibration_infeasible",
            SkewError::NonConvergence { .. } => "non_convergence",
            SkewError::DensityDegenerate { .. } => "density_degenerate",
            SkewError::CombinatorialBound { .. } => "combinatorial_bound",
            SkewError::Config(_) => "config",
            SkewError::Io(_) => "io",
            SkewError::Csv(_) => "csv",
            SkewError::Json(_) => "json",
        }
    }

    /// True for failures caused by the numbers themselves rather than by
    /// malformed input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SkewError::DegeneratePopulation
                | SkewError::DegenerateSpread { .. }
                | SkewError::EmptyCdf
                | SkewError::Collinear { .. }
                | SkewError::CalibrationInfeasible
                | SkewError::NonConvergence { .. }
                | SkewError::DensityDegenerate { .. }
                | SkewError::CombinatorialBound { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, SkewError>;
