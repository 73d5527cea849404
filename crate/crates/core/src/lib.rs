//! Visible-infrared person re-identification with spectrally enhanced grey
//! images and pseudo-anchor guided bidirectional aggregation.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense `f32`/`f64` tensors, a reverse-mode tape and gradient checks.
//! - [`spectral`]: grayscale conversion, 2D Fourier decomposition and SEG images.
//! - [`model`]: the weight-shareable dual-stream embedding network.
//! - [`losses`]: PABA, identity cross-entropy, cross-centre and the total objective.
//! - [`data`]: synthetic two-modality identities, folder loading, PK sampling.
//! - [`eval`]: Rank-k / mAP retrieval metrics.
//! - [`train`]: the training loop, presets, run artifacts and reports.
//!
//! Runnable walkthroughs live under `examples/`; the `sepg` binary wraps the
//! same library calls behind subcommands.

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
