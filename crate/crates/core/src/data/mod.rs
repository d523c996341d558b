//! Input and output: error samples, network cases, scenario configuration and result tables.

mod config;
mod network;
mod results;
mod samples;

pub use config::{EpsilonSearch, LeaderObjective, ScenarioConfig, ScenarioMode};
pub use network::{
    load_network_case, write_network_case, Branch, Bus, Generator, Microgrid, NetworkCase, DEFAULT_RESERVE_SHARE,
};
pub use results::{load_results, write_results, ResultTable};
pub use samples::{
    generate_synthetic_samples, infer_delta_t, load_error_samples, period_labels, write_error_samples,
    ErrorSampleMatrix, DEFAULT_DELTA_T,
};
