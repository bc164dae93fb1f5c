//! Vision-aided long-term mmWave beam tracking with knowledge
//! distillation.
//!
//! The crate covers the full experiment pipeline: a beam-domain oracle
//! over a ULA codebook, a synthetic moving-target scene generator,
//! motion-mask preprocessing, teacher/student sequence-to-sequence
//! classifiers with a hand-rolled autodiff engine, focal and
//! distillation losses, the staged training loop, evaluation metrics,
//! and report rendering. The `beamtrack` binary wires these into
//! subcommands; see the crate README for the workflow.

pub mod beam_oracle;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod report;
pub mod training;
pub mod synthetic_scene;

pub use error::{Error, Result};
