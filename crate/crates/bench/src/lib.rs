//! Run configuration, dataset generation and equalizer benchmarking for
//! the dual-polarization 16QAM link testbench.

pub mod config;
pub mod dataset;
pub mod sweep;

pub use config::RunConfig;
pub use dataset::{generate_dataset, Dataset};
pub use sweep::{run_sweep, SweepOutcome};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error(transparent)]
    Core(#[from] coheq_core::Error),
    #[error(transparent)]
    Nn(#[from] coheq_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;
