//! Experiment runner for `adml-core`: configuration files, dataset and
//! checkpoint formats, CSV reports, a thread-pool executor and the
//! subcommand pipelines behind the `adml` binary.

pub mod checkpoint;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod parallel;
pub mod presets;
pub mod report;
pub mod runner;

use std::path::Path;

pub use config::{apply_config, parse_config, ExperimentConfig};
pub use error::{CliError, Result};
pub use runner::{run_experiment, Command};

/// Layers an optional preset and then the file at `path` over the defaults.
pub fn load_config(preset: Option<&str>, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(name) = preset {
        let text = presets::preset(name).ok_or_else(|| {
            CliError::Usage(format!("unknown preset {name:?}; available: {}", presets::preset_names().join(", ")))
        })?;
        apply_config(&mut cfg, text)?;
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    apply_config(&mut cfg, &text)?;
    Ok(cfg)
}
