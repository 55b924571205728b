//! saliencyforge: synthesize labeled frame pairs with ground-truth optical
//! flow from still images and their saliency masks, and score saliency
//! predictions.
//!
//! A still image is oversegmented into superpixels ([`superpix`]); random
//! motions are drawn per region and smoothed over the region graph by
//! minimizing a quadratic energy ([`flowsynth`]); the resulting piecewise
//! constant flow warps the image and its mask into a second frame
//! ([`warp`]). [`pipeline`] runs this over whole datasets, [`flowio`] reads
//! and writes `.flo` files, and [`metrics`] implements the weighted
//! cross-entropy loss, PR curves, F-measure and MAE.

// `!(x > 0.0)` is used on purpose so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod flowio;
pub mod flowsynth;
pub mod imgcore;
pub mod metrics;
pub mod pipeline;
pub mod superpix;
pub mod warp;

pub use error::{Error, Result};
pub use flowsynth::{
    assemble_energy, init_region_motion, rasterize_flow, solve_flow, EnergySystem, PixelFlowField,
    RegionFlowField, RegionFlowInit, SolverConfig,
};
pub use imgcore::{GrayMask, LabImage, ProbMap, RasterImage};
pub use superpix::{
    build_adjacency, classify_regions, oversegment, region_stats, Class, RegionClass, RegionGraph,
    RegionStats, Segmentation,
};
