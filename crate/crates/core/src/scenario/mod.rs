//! Scenario configuration, execution, metrics and reporting.

pub mod analysis;
pub mod config;
pub mod metrics;
pub mod output;
pub mod world;

pub use config::{load_config, ConfigError, ScenarioConfig};
pub use metrics::{check_guarantee, summarize, Flow, GuaranteeOutcome, LatencyRecord};
pub use world::{run_scenario, RunOutput};
