//! Files in and out: CSV datasets, experiment configs, results and manifests.

pub mod config;
pub mod data;
pub mod results;

pub use config::{ExperimentConfigFile, OutputSection, Sweep};
pub use data::{fmt_real, load_csv, load_csv_with_site, save_csv};
pub use results::{
    manifest_path, sidecar_path, write_estimates, write_experiment_outputs, write_results,
    write_summary, write_timing, Manifest,
};
