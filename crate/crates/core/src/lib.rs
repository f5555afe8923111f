#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Fiber-flux diffusion density (FFDD) tractometry.
//!
//! The pipeline runs from a fiber bundle to a tract profile, aligns profiles
//! with a fast-marching solution of the Eikonal equation, and compares them
//! pairwise or group-wise along the tract:
//!
//! * [`bundle`]: streamlines, cosine-series mean fibers, arc-length sampling.
//! * [`descriptor`]: plane cross-sections, fiber-flux density (FFD) and
//!   fiber-flux diffusion density (FFDD), optimal plane normals, tract profiles.
//! * [`align`]: dissimilarity grids, fast marching, sub-sample path backtracking.
//! * [`stats`]: pointwise/global dissimilarity, reference profiles, atlases,
//!   z-scores, t-tests and Benjamini–Hochberg correction.
//! * [`io`]: bundle text format, CSV/JSON exports and the synthetic generator.

pub mod align;
pub mod bundle;
pub mod descriptor;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod stats;
pub mod svg;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
