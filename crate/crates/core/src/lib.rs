//! Scene-aware placement of new objects in street scenes.
//!
//! A [`LocationModel`] is fitted from annotated frames with per-pixel depth
//! (relative disparity) and is then sampled ancestrally, conditioned on a
//! scene's depth and drivable-space grids, to propose class, box and depth
//! for new objects. Instance masks, when available, tighten boxes and
//! resolve occlusion order.

// `!(x > 0.0)` comparisons are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fit;
pub mod geometry;
pub mod refine;
pub mod sampler;

pub use config::{PriorKind, RunConfig};
pub use error::{Error, Result};
pub use fit::{ClassModel, LocationModel};
pub use geometry::{BBox, DepthGrid, DrivableMask, LabelGrid, PatchRect, PixelSet};
pub use sampler::{PlacementProposal, RngState, SceneContext};
