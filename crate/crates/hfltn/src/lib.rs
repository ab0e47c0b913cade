//! Simulator, configuration and file formats around `hfltn-core`.

pub mod audit;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod metrics;
pub mod net;
pub mod world;

pub use config::{Ablation, ConfigBuilder, ConfigInvalid, ExperimentConfig};
pub use experiment::{run_ablation_matrix, run_experiment, ExperimentError, ExperimentOutput};
pub use metrics::RoundMetrics;
pub use world::World;
