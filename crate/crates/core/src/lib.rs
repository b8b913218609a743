//! Video frame interpolation with a seven-layer convolutional network.
//!
//! Two RGB frames are stacked into a six-channel tensor, lifted per pixel
//! into an embedding space by a 1x1 convolution, passed through a stack of
//! shrinking-kernel convolutions with LeakyReLU and dropout, and projected
//! back to RGB by a final 1x1 convolution. Every layer's backward pass is
//! derived by hand; [`gradcheck`] verifies them against finite differences.
//!
//! Module map:
//!
//! - [`tensor`]: rank-4 tensors, the counter-based [`Rng`], raw tensor dumps.
//! - [`nn`]: convolution, LeakyReLU, dropout, network builder and manifest.
//! - [`loss`]: pixel and encoder-space MSE, paper-scale MSE, PSNR.
//! - [`optim`]: Adam and SGD with momentum.
//! - [`data`]: frame I/O, triplets, packed datasets, synthetic motion data.
//! - [`train`]: configuration and the training loop.
//! - [`checkpoint`]: `FWCK` checkpoint files.
//! - [`eval`]: inference and evaluation reports.
//! - [`gradcheck`]: finite-difference gradient verification.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Rng, Scalar, Shape, Tensor};
