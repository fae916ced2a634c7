//! Pinhole camera mounted above a flat ground plane.
//!
//! Image rows are counted upward from the bottom edge. A point on the ground
//! at depth `z` appears at row `v0 − f·h_cam / z`, so ground depth grows
//! monotonically with the row index up to the horizon at `v0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    #[serde(rename = "f")]
    pub focal_length: f64,
    pub u0: f64,
    pub v0: f64,
    #[serde(rename = "height")]
    pub camera_height: f64,
}

impl CameraModel {
    pub fn new(focal_length: f64, u0: f64, v0: f64, camera_height: f64) -> Result<Self> {
        let cam = Self { focal_length, u0, v0, camera_height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_length > 0.0 && self.focal_length.is_finite()) {
            return Err(Error::Config(format!("focal length must be positive, got {}", self.focal_length)));
        }
        if !(self.camera_height > 0.0 && self.camera_height.is_finite()) {
            return Err(Error::Config(format!("camera height must be positive, got {}", self.camera_height)));
        }
        if !(self.u0.is_finite() && self.v0.is_finite()) {
            return Err(Error::Config("principal point must be finite".into()));
        }
        Ok(())
    }

    /// Row (bottom-origin) where a ground point at `depth` projects.
    pub fn contact_row(&self, depth: f64) -> f64 {
        self.v0 - self.focal_length * self.camera_height / depth
    }

    /// Depth of the ground seen at `row`, or `None` at and above the horizon.
    pub fn ground_depth(&self, row: f64) -> Option<f64> {
        (row < self.v0).then(|| self.focal_length * self.camera_height / (self.v0 - row))
    }

    /// Image column of a point at lateral offset `x` and depth `z`.
    pub fn column(&self, x: f64, z: f64) -> f64 {
        self.u0 + self.focal_length * x / z
    }

    /// Lateral offset of image column `u` at depth `z`.
    pub fn lateral(&self, u: f64, z: f64) -> f64 {
        (u - self.u0) * z / self.focal_length
    }

    /// Projected length in pixels of a metric extent at depth `z`.
    pub fn pixels(&self, extent: f64, z: f64) -> f64 {
        self.focal_length * extent / z
    }
}
