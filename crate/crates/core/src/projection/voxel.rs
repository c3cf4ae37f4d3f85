use std::f64::consts::PI;

use super::categorical::gather_points;
use super::range::position_f64;
use super::{CategoricalGrid, CellGrid, Domain, PointPredictions, SensorSpec};
use crate::error::{Error, Result};
use crate::scanio::PointScan;

/// Mean radial distance, mean height, then the point features, then
/// `ln(1 + member count)`.
pub const VOXEL_EXTRA_CHANNELS: usize = 3;

/// Cylindrical voxelization. Features are member means; every point belongs
/// to exactly one voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    /// (H radial, W azimuth, L height)
    pub dims: [usize; 3],
    pub channels: usize,
    /// Row-major `H x W x L x channels`.
    pub grid: Vec<f64>,
    pub occupied: Vec<bool>,
    /// Flat voxel (`(h * W + w) * L + l`) of every point.
    pub voxel_of_point: Vec<usize>,
    pub members: Vec<Vec<u32>>,
}

impl VoxelGrid {
    pub fn num_points(&self) -> usize {
        self.voxel_of_point.len()
    }

    pub fn flat(&self, h: usize, w: usize, l: usize) -> usize {
        (h * self.dims[1] + w) * self.dims[2] + l
    }

    pub fn coords(&self, cell: usize) -> (usize, usize, usize) {
        let l = cell % self.dims[2];
        let w = (cell / self.dims[2]) % self.dims[1];
        let h = cell / (self.dims[1] * self.dims[2]);
        (h, w, l)
    }
}

impl CellGrid for VoxelGrid {
    fn domain(&self) -> Domain {
        Domain::Voxel
    }

    fn num_cells(&self) -> usize {
        self.occupied.len()
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn is_valid(&self, cell: usize) -> bool {
        self.occupied[cell]
    }

    fn cell(&self, cell: usize) -> &[f64] {
        &self.grid[cell * self.channels..(cell + 1) * self.channels]
    }
}

fn bin(value: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((value - lo) / (hi - lo) * bins as f64).floor();
    t.clamp(0.0, (bins - 1) as f64) as usize
}

/// Voxel coordinates `(h, w, l)` of a position. Radius and height clamp into
/// range; azimuth is binned over the half-open interval `[-pi, pi)`.
pub(crate) fn voxel_coords(p: [f64; 3], sensor: &SensorSpec) -> (usize, usize, usize) {
    let [x, y, z] = p;
    let [nh, nw, nl] = sensor.voxel_dims;
    let rho = (x * x + y * y).sqrt();
    let mut phi = y.atan2(x);
    if phi >= PI {
        phi -= 2.0 * PI;
    }
    (
        bin(rho, 0.0, sensor.radial_max, nh),
        bin(phi, -PI, PI, nw),
        bin(z, sensor.z_min, sensor.z_max, nl),
    )
}

pub fn project_to_voxel(scan: &PointScan, sensor: &SensorSpec) -> Result<VoxelGrid> {
    sensor.validate()?;
    if scan.is_empty() {
        return Err(Error::Argument("cannot voxelize an empty scan".into()));
    }
    let dims = sensor.voxel_dims;
    let cells = sensor.voxel_cells();
    let channels = scan.num_features + VOXEL_EXTRA_CHANNELS;
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); cells];
    let mut voxel_of_point = Vec::with_capacity(scan.len());
    for i in 0..scan.len() {
        let (h, w, l) = voxel_coords(position_f64(scan, i), sensor);
        let cell = (h * dims[1] + w) * dims[2] + l;
        voxel_of_point.push(cell);
        members[cell].push(i as u32);
    }

    let mut grid = vec![0.0; cells * channels];
    let mut occupied = vec![false; cells];
    for (cell, ids) in members.iter().enumerate() {
        if ids.is_empty() {
            continue;
        }
        occupied[cell] = true;
        let out = &mut grid[cell * channels..(cell + 1) * channels];
        for &i in ids {
            let i = i as usize;
            let [x, y, z] = position_f64(scan, i);
            out[0] += (x * x + y * y).sqrt();
            out[1] += z;
            for (o, &f) in out[2..2 + scan.num_features].iter_mut().zip(scan.feature_row(i)) {
                *o += f as f64;
            }
        }
        let n = ids.len() as f64;
        for o in out[..2 + scan.num_features].iter_mut() {
            *o /= n;
        }
        out[channels - 1] = n.ln_1p();
    }
    Ok(VoxelGrid {
        dims,
        channels,
        grid,
        occupied,
        voxel_of_point,
        members,
    })
}

/// Each point takes the prediction of its voxel.
pub fn voxel_to_points(vox: &VoxelGrid, cat: &CategoricalGrid) -> Result<PointPredictions> {
    gather_points(cat, Domain::Voxel, vox.num_cells(), &vox.voxel_of_point)
}
