//! Light-field de-occlusion toolkit.
//!
//! The crate is `no_std` (with `alloc`) and carries every algorithmic piece:
//!
//! - [`lightfield`]: sub-aperture image storage, sub-pixel view warping,
//!   rectification, channel stacking and patch extraction.
//! - [`mask`]: the mask-embedding synthesizer that plants disparity-consistent
//!   occluders into clean light fields.
//! - [`refocus`]: synthetic-aperture baselines (shift-and-average, median).
//! - [`nn`]: a small reverse-mode differentiable kernel set.
//! - [`model`]: the DeOccNet encoder-decoder built on [`nn`].
//! - [`train`]: Adam, the learning-rate schedule, batching and the training loop.
//! - [`metrics`]: mean l1, PSNR, SSIM and report assembly.
//!
//! File formats, PNG handling and the command-line front end live in the
//! companion `deocc` crate.
#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

mod error;
pub mod image;
pub mod lightfield;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod refocus;
pub mod rng;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use image::{AngularCoord, Disparity, Image, LightField};
pub use scalar::Scalar;
