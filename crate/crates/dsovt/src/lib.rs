//! DSOVT: prediction of gridded dynamical systems from sparse, time-varying
//! point sensors.
//!
//! Sparse observations are rasterized onto the grid with a Voronoi
//! tessellation and fed either to a convolutional encoder-decoder whose
//! latent sequence is advanced by an LSTM (CED-LSTM), or end-to-end to a
//! ConvLSTM. Both families can be trained with an additional
//! energy-conservation penalty. The crate also ships a shallow-water data
//! generator, ordinary-Kriging baselines and an evaluation harness
//! (SSIM / PSNR / R-RMSE, rolling forecasts).
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod data;
pub mod error;
pub mod eval;
pub mod kriging;
pub mod manifest;
pub mod nn;
pub mod swe;
pub mod train;
pub mod voronoi;

pub use error::{Error, Result};
