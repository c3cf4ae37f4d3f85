//! Mixing augmentations applied to pseudo-labelled scans: column-strip
//! CutMix on range images and inclination-band LaserMix on point clouds
//! (re-voxelized afterwards).

mod cutmix;
mod lasermix;

pub use cutmix::{column_intervals, cutmix_range, MixedRange};
pub use lasermix::{band_of, lasermix_points, lasermix_voxel, LabelledCloud, MixedCloud, MixedVoxel};

use crate::error::{Error, Result};
use crate::projection::SensorSpec;

/// How a batch is mixed: column strips for range images, inclination bands
/// and partners for point clouds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixPlan {
    pub batch: usize,
    pub intervals: Vec<std::ops::Range<usize>>,
    pub bands: usize,
    /// Element `i` takes its odd bands from `partner[i]`.
    pub partner: Vec<usize>,
}

impl MixPlan {
    /// Strips of width `image_width / batch`, `num_beams / 2` bands, and
    /// each element paired with its successor.
    pub fn new(batch: usize, sensor: &SensorSpec) -> Result<MixPlan> {
        if batch == 0 {
            return Err(Error::Argument("empty batch".into()));
        }
        Ok(MixPlan {
            batch,
            intervals: column_intervals(sensor.image_width, batch)?,
            bands: (sensor.num_beams / 2).max(1),
            partner: (0..batch).map(|i| (i + 1) % batch).collect(),
        })
    }
}
