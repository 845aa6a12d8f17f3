//! Design-based inference for the quantile skewness indices b2(r)
//! (Bowley/Hinkley) and b3 (Groeneveld-Meeden) in finite populations.
//!
//! The crate covers plug-in estimation from Hájek, Horvitz-Thompson and
//! raking-calibration cdf estimators, linearization variance estimation
//! with Woodruff density estimates, normal confidence intervals, and a
//! seeded Monte Carlo harness with brute-force oracles.

// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod designs;
pub mod error;
pub mod estimators;
pub mod montecarlo;
pub mod numeric;
pub mod oracle;
pub mod population;
pub mod variance;
pub mod wcdf;

pub use calibration::{calibration_cdf, solve_raking, CalibrationWeights, SolverOptions};
pub use designs::{DesignKind, DesignSpec, DrawnSample, SamplingDesign};
pub use error::{Result, SkewError};
pub use estimators::{estimate, hajek_cdf, ht_cdf, Auxiliary, CdfBasis, EstimatorKind, SampleView, Target};
pub use montecarlo::{krw_benchmark, SimulationConfig, SimulationReport};
pub use population::{generate_population, stratify_by_x, true_parameters, FinitePopulation, PopulationParams};
pub use variance::{infer, normal_ci, EstimateRecord, InferenceOptions, VarianceEstimate, VarianceMethod};
pub use wcdf::WeightedCdf;
