//! Neural equalizers for dual-polarization soft symbols: a bidirectional
//! LSTM and a three-layer CNN, both with hand-written gradients, Adam
//! training, and 32-bit fixed-point weight export.

mod conv1d;
pub mod data;
pub mod fixedpoint;
mod gemm;
mod lstm;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use conv1d::{Conv1d, ConvCache, Padding};
pub use data::{equalize, make_windows, Windows};
pub use lstm::{BiLstm, LstmCache, LstmDirection};
pub use model::{build_model, ArchKind, EqArch, EqModel};
pub use tensor::Tensor;
pub use train::{train, transfer_fit, PolDataset, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("stream of {len} symbols is shorter than one {need}-symbol window")]
    TooShort { len: usize, need: usize },
    #[error("training pool is empty")]
    EmptyPool,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("parameter has no gradient buffer")]
    MissingGradient,
    #[error("malformed weight blob: {0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] coheq_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
