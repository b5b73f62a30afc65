//! Localized thermal-optical fusion.
//!
//! A convolutional encoder/decoder whose middle section mirrors a two-level
//! 2-D wavelet decomposition predicts a mask from a thermal image; the mask is
//! averaged with the thermal input and histogram equalized. A greedy
//! region-of-fusion search then boxes the area where the fused output departs
//! from the thermal input.

pub mod datakit;
pub mod dwtnet;
pub mod error;
pub mod fusion;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod rof;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
pub use image::GrayImage;
pub use tensor::Tensor;
