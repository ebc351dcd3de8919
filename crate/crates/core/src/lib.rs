//! Link-level building blocks for a dual-polarization 16QAM coherent
//! testbench: signal containers and pulse shaping, the modem and its
//! metrics, Manakov split-step propagation, classical receiver DSP
//! (dispersion compensation, digital backpropagation) and hardware
//! complexity arithmetic.

pub mod complexity;
pub mod error;
mod fft;
pub mod fiberlink;
pub mod modem;
pub mod rng;
pub mod rxdsp;
pub mod sigkit;

pub use error::{Error, Result};
pub use num_complex::Complex64;
