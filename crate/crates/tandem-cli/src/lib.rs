//! Implementation of the `tandem` command-line tool.
//!
//! The binary in `main.rs` is a thin argument-parsing shell; everything it
//! computes lives here so the sweep and report builders can be exercised
//! directly by integration tests.

pub mod commands;
pub mod presets;
