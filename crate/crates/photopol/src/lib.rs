//! Photo-polarimetric surface height reconstruction.
//!
//! The pipeline goes: simulate (or load) a polariser-angle image stack,
//! decompose it into a polarisation image (unpolarised intensity per
//! channel plus a shared degree of polarisation and phase angle), stack
//! per-pixel linear constraints on the height gradient, and solve one
//! sparse least-squares system directly for height. Lighting can be
//! calibrated or estimated from the two-source data itself, and albedo is
//! recovered once height is known.
//!
//! Per-pixel work (rendering, sinusoid fitting, constraint assembly,
//! matrix-vector products) is data parallel and fans out over rayon when
//! the default `parallel` feature is enabled; disabling it yields a
//! sequential build with identical results.

pub mod albedo;
pub mod constraints;
pub mod diff;
pub mod error;
pub mod grid;
pub mod io;
pub mod lightest;
pub mod metrics;
pub mod optics;
pub mod par;
pub mod poldecomp;
pub mod rng;
pub mod simplex;
pub mod solver;
pub mod sparse;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{Mask, PixelGrid};
pub use optics::{Gradient2, RefractiveIndex, UnitVector3};
