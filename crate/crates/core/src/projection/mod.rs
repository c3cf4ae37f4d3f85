//! Invertible transforms between points, spherical range images and
//! cylindrical voxel grids.
//!
//! Both grids keep exact point maps: every point knows its pixel and voxel,
//! so per-cell predictions can be carried back to points and on to the other
//! view without interpolation.

mod categorical;
mod range;
mod sensor;
mod transfer;
mod voxel;

pub use categorical::{CategoricalGrid, Domain, HardGrid, PointPredictions, SoftGrid};
pub use range::{project_to_range, range_to_points, RangeImage, RANGE_GEOMETRY_CHANNELS};
pub use sensor::SensorSpec;
pub use transfer::{cross_transfer, label_grid, transfer_soft, Repr};
pub use voxel::{project_to_voxel, voxel_to_points, VoxelGrid, VOXEL_EXTRA_CHANNELS};

/// Read access shared by every gridded view of a scan.
pub trait CellGrid {
    fn domain(&self) -> Domain;
    fn num_cells(&self) -> usize;
    fn channels(&self) -> usize;
    fn is_valid(&self, cell: usize) -> bool;
    /// Raw channel values of one cell.
    fn cell(&self, cell: usize) -> &[f64];

    fn valid_cells(&self) -> Vec<usize> {
        (0..self.num_cells()).filter(|&c| self.is_valid(c)).collect()
    }

    fn valid_count(&self) -> usize {
        (0..self.num_cells()).filter(|&c| self.is_valid(c)).count()
    }
}
