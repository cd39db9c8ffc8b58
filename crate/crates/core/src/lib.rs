//! Correlated initialization of convolutional filters.
//!
//! The crate is organised around the objects the experiments produce and
//! consume:
//!
//! * [`init`] generates correlated and uncorrelated `k x k` filters and whole
//!   layer tensors, including the variance-corrected strength bound.
//! * [`tensor`] holds [`LayerTensor`] and its JSON file format.
//! * [`dynamics`] simulates gradient descent of a two-weight ReLU filter on a
//!   symmetric two-sample system and measures zig-zagging.
//! * [`propagation`] estimates the expected output magnitude of a deep stack
//!   of constant-input 1D convolutions, with exact and closed-form references.
//! * [`correlation`] computes Pearson coefficients and distance profiles of
//!   filter weights.
//! * [`trainer`] is a small CNN trainer on synthetic spatially-correlated data.

pub mod correlation;
pub mod dynamics;
mod error;
pub mod init;
pub mod propagation;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use init::{
    DecayProfile, FilterKernel, InitSpec, LocationStrategy, Scaling, StrengthDraw,
};
pub use tensor::LayerTensor;

/// Header line written at the top of every CSV export.
pub const CSV_SCHEMA_LINE: &str = "# schema=v1";
