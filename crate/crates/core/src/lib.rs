//! Streaming probabilistic depth from a posed monocular video.
//!
//! The pipeline estimates a per-pixel depth probability volume (DPV) for each
//! reference frame by plane-sweep matching against its temporal neighbors,
//! fuses the volumes over time with a Bayesian predict/update filter (plain,
//! globally damped, or residual-gated), upsamples the fused volume with
//! image-guided filtering, and refines window camera poses by
//! confidence-weighted photometric alignment.

pub mod dpv;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod plane_sweep;
pub mod pose_opt;
pub mod refine;

pub use error::Error;
