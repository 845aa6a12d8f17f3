//! Shared fixtures for the benchmarks.

use fps_skew::{generate_population, stratify_by_x, FinitePopulation, SamplingDesign, SimulationConfig};

/// The stratified gamma = 1 population used throughout the benchmarks.
pub fn population(size: usize) -> FinitePopulation {
    stratify_by_x(&generate_population(7532, size, 1.0).unwrap(), 3).unwrap()
}

pub fn stratified_design(pop: &FinitePopulation, n: usize) -> SamplingDesign {
    SamplingDesign::stratified_proportional(pop.strata(), n).unwrap()
}

/// A simulation config with `replications` replications per set.
pub fn simulation_config(replications: usize) -> SimulationConfig {
    let text = format!(
        "[population]\nsize = 800\ngamma = 1.0\nseed = 7532\n\n[design]\nkind = \"stratified_srswor\"\nsample_size = 80\n\n[metrics]\nreplications = {replications}\n\n[run]\nmaster_seed = 1\nthreads = 1\n"
    );
    SimulationConfig::from_toml(&text).unwrap()
}
