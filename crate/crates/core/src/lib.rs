//! Force-effect prediction at desk scale.
//!
//! The pipeline has four stages:
//!
//! 1. [`scene`] builds procedural rooms of boxes and samples forces on visible surface points.
//! 2. [`physics`] pushes the target box and records its motion until it comes to rest.
//! 3. [`quantize`] turns the sampled velocities into a short token sequence over an
//!    18-symbol vocabulary (17 directions plus `stop`).
//! 4. [`encode`], [`net`] and [`train`] render the scene, encode the force as an image and
//!    learn a two-tower convolutional encoder feeding a rectifier recurrence that emits
//!    the sequence one token at a time. [`eval`] scores predictions.
//!
//! The [`cli`] module wires these stages into the `force-effect` binary and owns the
//! on-disk dataset, model and report formats.

pub mod cli;
pub mod dataset;
pub mod encode;
mod error;
pub mod eval;
pub mod net;
pub mod physics;
pub mod quantize;
pub mod scene;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
