//! CPU engine for band-adaptive spectral-spatial pixel classification of
//! hyperspectral scenes.
//!
//! The network splits the spectral axis of a `p x p x N_c` pixel
//! neighborhood into bands, runs a (optionally weight-shared) sub-network
//! per band, concatenates the band features and classifies with a small
//! fully-connected head. Everything is deterministic given a seed: data
//! splits, initialization, shuffling and dropout all draw from explicit
//! counter-based generators.

pub mod arch;
pub mod data;
pub mod error;
pub mod fsio;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod rng;
pub mod run;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
