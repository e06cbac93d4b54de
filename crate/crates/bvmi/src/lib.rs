//! Files, configuration and the experiment runner around [`bvmi_core`].

pub mod config;
pub mod error;
pub mod impute;
pub mod ingest;
pub mod runner;

pub use config::{ExperimentConfig, ImputeConfig};
pub use error::{Error, Result};
pub use impute::impute_once;
pub use ingest::{fit_covariance, load_panel, write_panel, PanelFileSchema};
pub use runner::{run_experiment, ExperimentReport};
