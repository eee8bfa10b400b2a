//! Field-of-view recovery for truncated CT-like slices.
//!
//! The pipeline simulates FOV truncation on synthetic phantoms, estimates
//! the untruncated body extent with a small box regressor, outpaints the
//! missing anatomy with a conditional diffusion model, and picks the
//! candidate whose muscle/SAT areas sit closest to the per-tissue medians.

pub mod bodycomp;
pub mod bodydetect;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod evalharness;
pub mod fovsim;
pub mod imagecore;
pub mod io;
pub mod nn;
pub mod phantom;
pub mod rng;
pub mod selftest;

pub use error::{Error, Result};
