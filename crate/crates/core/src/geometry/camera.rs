use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Background marker in depth images.
pub const MASKED: f32 = -1.0;

/// Radius of the unit cube the voxel grid is scaled into.
pub const OBJECT_RADIUS: f64 = 0.866_025_403_784_438_6;

/// Pinhole depth camera. The object's grid is scaled to the unit cube and
/// centered on the optical axis at `object_distance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub object_distance: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 64.0,
            fy: 64.0,
            cx: 31.5,
            cy: 31.5,
            width: 64,
            height: 64,
            object_distance: 2.5,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("principal point must be finite"));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::invalid("image must be at least 8x8"));
        }
        if !(self.object_distance > OBJECT_RADIUS) || !self.object_distance.is_finite() {
            return Err(Error::invalid(
                "object distance must exceed the object bounding radius",
            ));
        }
        Ok(())
    }
}

/// Segmented depth image: row-major z-depths in meters, background pixels
/// hold [`MASKED`].
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    depth: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, depth: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("depth image must be non-empty"));
        }
        Error::check_len(width * height, depth.len())?;
        if depth
            .iter()
            .any(|&d| d != MASKED && !(d > 0.0 && d.is_finite()))
        {
            return Err(Error::invalid("depth values must be positive or the -1 sentinel"));
        }
        Ok(Self {
            width,
            height,
            depth,
        })
    }

    pub fn masked(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![MASKED; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> &[f32] {
        &self.depth
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.depth[row * self.width + col]
    }

    #[inline]
    pub fn is_object(&self, row: usize, col: usize) -> bool {
        self.at(row, col) != MASKED
    }

    /// Silhouette as a row-major boolean mask.
    pub fn silhouette(&self) -> Vec<bool> {
        self.depth.iter().map(|&d| d != MASKED).collect()
    }

    pub fn object_pixel_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d != MASKED).count()
    }
}
