use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sensor geometry plus the range-image and voxel-grid resolutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSpec {
    pub num_beams: usize,
    /// Upper edge of the vertical field of view, degrees.
    pub fov_up: f64,
    /// Lower edge of the vertical field of view, degrees.
    pub fov_down: f64,
    /// Range image columns (V).
    pub image_width: usize,
    /// Range image rows (U).
    pub image_height: usize,
    /// Cylindrical voxel bins (H radial, W azimuth, L height).
    pub voxel_dims: [usize; 3],
    pub radial_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec {
            num_beams: 32,
            fov_up: 10.0,
            fov_down: -30.0,
            image_width: 128,
            image_height: 32,
            voxel_dims: [16, 32, 8],
            radial_max: 40.0,
            z_min: -3.0,
            z_max: 3.0,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_up > self.fov_down) {
            return Err(Error::Config(format!(
                "fov_up {} must exceed fov_down {}",
                self.fov_up, self.fov_down
            )));
        }
        if self.image_width == 0 || self.image_height == 0 || self.voxel_dims.contains(&0) {
            return Err(Error::Config("grid dimensions must be positive".into()));
        }
        if self.num_beams == 0 {
            return Err(Error::Config("num_beams must be positive".into()));
        }
        if !(self.radial_max > 0.0) {
            return Err(Error::Config("radial_max must be positive".into()));
        }
        if !(self.z_max > self.z_min) {
            return Err(Error::Config("z_max must exceed z_min".into()));
        }
        Ok(())
    }

    pub fn fov_up_rad(&self) -> f64 {
        self.fov_up.to_radians()
    }

    pub fn fov_down_rad(&self) -> f64 {
        self.fov_down.to_radians()
    }

    pub fn range_cells(&self) -> usize {
        self.image_width * self.image_height
    }

    pub fn voxel_cells(&self) -> usize {
        self.voxel_dims.iter().product()
    }
}
