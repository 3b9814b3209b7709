//! Acoustic-impedance inversion from seismic images with a spatiotemporal
//! (2-D) temporal convolutional network, plus 1-D TCN and LSTM baselines.

// `!(x >= 0.0)` is the NaN-rejecting form used by every validator.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::large_enum_variant)]

pub mod error;
pub mod geodata;
pub mod models;
pub mod nn;
pub mod segy;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Float, Graph, Tensor, Var};
pub use geodata::{Dataset, GridKind, Norm, SectionGrid, SynthConfig, SynthSection, VerticalAxis};
pub use models::{ModelConfig, ModelParams, Variant};
pub use segy::{SegyFile, SegyTrace};
pub use training::{Checkpoint, EpochStats, Metrics, TrainConfig, TrainedModel, TraceMetrics};
