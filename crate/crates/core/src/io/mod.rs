//! File formats, run configuration and the command pipeline.

pub mod config;
pub mod meta;
pub mod mrc;
pub mod pipeline;
pub mod plot;

pub use config::{AnalysisOptions, RunConfig};
pub use meta::{meta_csv_read, meta_csv_write};
pub use mrc::{mrc_read, mrc_write, mrcs_read, mrcs_write, MrcMap};
pub use pipeline::{
    cmd_evaluate, cmd_extract_volume, cmd_fsc, cmd_simulate, cmd_train, compute_metrics, load_dataset, Dataset,
    Metrics, Predictions,
};
