//! Spike-driven graph neural networks trained with surrogate-gradient
//! backpropagation through time, plus a theoretical energy profiler.
//!
//! Layers exchange bit-packed binary spike trains; the per-step linear map
//! of a spike train only gathers and adds weight rows.

pub mod coding;
pub mod config;
pub mod error;
pub mod graph;
pub mod layers;
pub mod model;
pub mod neuron;
pub mod profiler;
pub mod spike;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
