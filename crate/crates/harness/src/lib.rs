//! Experiment harness: named benchmark scenarios, seed filtering, paired
//! baseline/guided runs with ablations, and report and plot-data files.

pub mod config;
pub mod error;
pub mod experiment;
pub mod plots;
pub mod presets;
pub mod seeds;

pub use config::{Ablation, ExperimentConfig, Family, Scenario, SeedSelection};
pub use error::HarnessError;
pub use experiment::{run_experiment, ExperimentReport, MetricRow, VariantSummary};
pub use plots::emit_plot_data;
pub use seeds::{filter_seed_set, filter_seeds, SeedRecord};
