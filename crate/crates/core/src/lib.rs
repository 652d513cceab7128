//! Pure algorithmic core for offline pointmap distillation.
//!
//! Everything here is `no_std` + `alloc`: dense map types and resampling,
//! the binary16 and run-length codecs, the byte layout of the stacked
//! supervision archive, the dataset sub-sampling rules, the cache-build
//! pipeline, the confidence-weighted distillation loss (with analytic
//! gradients and a finite-difference verifier) and the per-view
//! reconstruction metrics. File IO, manifests on disk and the CLI live in the
//! `distillcache` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod archive;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod half;
pub mod loss;
pub mod manifest;
pub mod rle;
pub mod teacher;

pub use error::{Error, Result};
pub use geometry::{ConfidenceMap, Frame, PointMap, Resolution, ValidityMask, View, ViewMaps, ViewSet};
pub use half::Half;
pub use rle::RleMask;

/// Patch edge of the student encoder; cache resolutions must be multiples of it.
pub const PATCH_SIZE: usize = 14;
/// Default cache resolution (height, width).
pub const DEFAULT_TARGET_RES: Resolution = Resolution { height: 224, width: 518 };
/// Default local-confidence threshold for the validity mask.
pub const DEFAULT_TAU: f64 = 0.3;
/// Default number of contiguous views per training sample.
pub const DEFAULT_VIEWS_PER_SAMPLE: usize = 20;
