//! Deterministic simulator and experiment harness for the hybrid protocol.

pub mod adversary;
pub mod batch;
pub mod clients;
pub mod committee;
pub mod config;
pub mod harness;
pub mod metrics;
pub mod msg;
pub mod net;
pub mod node;
pub mod rewards;
pub mod sim;
pub mod trace;

pub use config::ScenarioConfig;
pub use harness::{run_scenario, simulate, HarnessError};
pub use metrics::MetricsReport;
pub use sim::{SimError, World};
