//! Experiment configuration, presets, trace files and plots.

pub mod config;
pub mod plot;
pub mod presets;
pub mod runner;
pub mod trace_io;

pub use config::{parse_config_str, ConfigError, ExperimentConfig};
pub use plot::{emit_svg_plot, PlotOptions};
pub use runner::{run_experiment, run_preset, write_outputs, VariantRun};
pub use trace_io::{emit_csv, emit_jsonl, parse_csv, CSV_HEADER};

/// Reads and parses a config file.
pub fn parse_config(path: &std::path::Path) -> crate::error::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::error::Error::io(path, e))?;
    Ok(parse_config_str(&text)?)
}
