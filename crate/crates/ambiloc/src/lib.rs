//! Multi-speaker sound source localization on first-order Ambisonics audio.
//!
//! The crate covers the full pipeline: a synthetic shoebox-room simulator
//! producing four-channel Ambisonics mixtures, acoustic intensity features,
//! a quasi-uniform spherical class grid, self-attention localization
//! networks trained from scratch with hand-written gradients, a DNN-free
//! intensity-histogram baseline, and evaluation plus throughput tooling.

pub mod attention;
pub mod cli;
pub mod error;
pub mod eval;
pub mod features;
pub mod grid;
pub mod model;
pub mod nn;
pub mod simulate;
pub mod train;
pub mod tramp;
pub mod wav;

pub use error::{Error, Result};
