//! Everything a command reads or writes: run configs and their manifests,
//! checkpoints, metrics CSVs and PGM sample grids.

mod checkpoint;
mod config;
mod image;
mod metrics;
mod recorder;

pub use checkpoint::{load_checkpoint, param_hash, render_manifest, save_checkpoint, Checkpoint};
pub use config::{load_config, parse_config, parse_pairs, Command, RunConfig, DATA_ROOT_ENV};
pub use image::{encode_pgm, grid_manifest, write_image_grid, write_pgm, write_trace_csv};
pub use metrics::{export_plot, read_metrics, wasserstein_series, MetricsWriter, METRICS_HEADER, SERIES_HEADER};
pub use recorder::{write_text, RunRecorder};
