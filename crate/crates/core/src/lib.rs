//! Occlusion-reasoned bird's-eye-view (BEV) semantic mapping.
//!
//! The crate covers the full desk-scale pipeline: semantic/depth rasters and
//! class catalogs ([`grid`], [`catalog`]), foreground masking and random-box
//! sampling ([`mask`]), depth-based perspective-to-BEV projection
//! ([`project`]), a procedural road-layout simulator ([`sim`]), road-graph
//! rasterization ([`osm`]), differentiable similarity+flow warps ([`warp`]),
//! gradient-based map alignment ([`align`]), reconstruction/adversarial
//! losses with a small critic ([`learn`]), BEV completion ([`refine`]), and
//! evaluation metrics ([`metrics`]).
//!
//! Everything is `f64`, deterministic given explicit seeds, and free of IO;
//! file formats and the CLI live in the companion `bevmap-cli` crate.

#![no_std]
// test builds link std, whose inherent float methods shadow the Float trait
// imports the no_std build needs
#![cfg_attr(test, allow(unused_imports))]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod align;
pub mod catalog;
pub mod error;
pub mod grid;
pub mod learn;
pub mod mask;
pub mod metrics;
pub mod osm;
pub mod project;
pub mod refine;
pub mod sim;
pub mod warp;

pub use catalog::{ClassCatalog, ClassRole};
pub use error::Error;
pub use grid::{DepthMap, LabelGrid, Raster, SemanticGrid};
pub use project::{BevConfig, BevMap, CameraIntrinsics};

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
