//! Sparse optical flow between two adjacent grayscale frames.
//!
//! Corners are picked with the Shi-Tomasi minimum-eigenvalue score and
//! tracked with iterative Lucas-Kanade, coarse to fine over a 2×2-mean
//! image pyramid.

mod features;
mod image;
mod lk;
mod pyramid;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::PixelPoint;

pub use self::features::{detect_features, min_eigen_scores, FeatureParams};
pub use self::image::{load_gray, save_gray, GrayImage};
pub use self::lk::{lucas_kanade, LkParams};
pub use self::pyramid::{build_pyramid, Pyramid};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("image buffer holds {actual} pixels, expected {width}x{height}")]
    BufferSize {
        width: u32,
        height: u32,
        actual: usize,
    },
    #[error("pyramid level {level} would be {width}x{height}, smaller than the {window}px LK window")]
    TooManyLevels {
        level: usize,
        width: u32,
        height: u32,
        window: u32,
    },
    #[error("pyramid level count must be at least 1")]
    NoLevels,
    #[error("pyramid geometry differs: {0:?} vs {1:?}")]
    GeometryMismatch(Vec<(u32, u32)>, Vec<(u32, u32)>),
    #[error("failed to read image {path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: ::image::ImageError,
    },
    #[error("failed to write image {path}: {source}")]
    Encode {
        path: String,
        #[source]
        source: ::image::ImageError,
    },
}

/// A sparse flow observation: the feature at `base` in the earlier frame moved
/// by `displacement` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowVector {
    pub base: PixelPoint,
    pub displacement: [f64; 2],
    pub magnitude: f64,
    pub track_ok: bool,
}

impl FlowVector {
    pub fn new(base: PixelPoint, du: f64, dv: f64) -> Self {
        Self {
            base,
            displacement: [du, dv],
            magnitude: du.hypot(dv),
            track_ok: true,
        }
    }

    pub fn failed(base: PixelPoint) -> Self {
        Self {
            base,
            displacement: [0.0, 0.0],
            magnitude: 0.0,
            track_ok: false,
        }
    }

    /// Position of the feature in the later frame.
    pub fn tip(&self) -> PixelPoint {
        PixelPoint::new(
            self.base.u + self.displacement[0],
            self.base.v + self.displacement[1],
        )
    }

    /// Tracked and moving, i.e. usable as a line constraint.
    pub fn is_usable(&self) -> bool {
        self.track_ok && self.magnitude > 0.0 && self.magnitude.is_finite()
    }
}
