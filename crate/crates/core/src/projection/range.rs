use std::f64::consts::PI;

use super::categorical::gather_points;
use super::{CategoricalGrid, CellGrid, Domain, PointPredictions, SensorSpec};
use crate::error::{Error, Result};
use crate::scanio::PointScan;

/// Range, x, y, z precede the point features in every pixel.
pub const RANGE_GEOMETRY_CHANNELS: usize = 4;

/// Spherical projection of a scan. Each pixel holds the nearest point that
/// falls into it; every point remembers its pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major `height x width x channels`.
    pub grid: Vec<f64>,
    pub valid: Vec<bool>,
    /// Winning point per pixel.
    pub point_index: Vec<Option<u32>>,
    /// Flat pixel (`u * width + v`) of every point, including collision losers.
    pub pixel_of_point: Vec<usize>,
}

impl RangeImage {
    pub fn num_points(&self) -> usize {
        self.pixel_of_point.len()
    }

    pub fn pixel(&self, u: usize, v: usize) -> usize {
        u * self.width + v
    }

    pub fn range_at(&self, cell: usize) -> f64 {
        self.grid[cell * self.channels]
    }
}

impl CellGrid for RangeImage {
    fn domain(&self) -> Domain {
        Domain::Range
    }

    fn num_cells(&self) -> usize {
        self.valid.len()
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn is_valid(&self, cell: usize) -> bool {
        self.valid[cell]
    }

    fn cell(&self, cell: usize) -> &[f64] {
        &self.grid[cell * self.channels..(cell + 1) * self.channels]
    }
}

/// Pixel `(u, v)` of a point at the given position; out-of-FOV rows clamp.
pub(crate) fn pixel_coords(p: [f64; 3], sensor: &SensorSpec) -> (usize, usize) {
    let [x, y, z] = p;
    let r = (x * x + y * y + z * z).sqrt();
    let yaw = y.atan2(x);
    let pitch = (z / r).clamp(-1.0, 1.0).asin();
    let (up, down) = (sensor.fov_up_rad(), sensor.fov_down_rad());
    let rows = sensor.image_height as f64;
    let cols = sensor.image_width as f64;
    let u = ((1.0 - (pitch - down) / (up - down)) * rows).floor();
    let v = (0.5 * (1.0 - yaw / PI) * cols).floor();
    let u = u.clamp(0.0, rows - 1.0) as usize;
    let v = v.clamp(0.0, cols - 1.0) as usize;
    (u, v)
}

pub(crate) fn position_f64(scan: &PointScan, i: usize) -> [f64; 3] {
    let [x, y, z] = scan.positions[i];
    [x as f64, y as f64, z as f64]
}

pub fn project_to_range(scan: &PointScan, sensor: &SensorSpec) -> Result<RangeImage> {
    sensor.validate()?;
    if scan.is_empty() {
        return Err(Error::Argument("cannot project an empty scan".into()));
    }
    let (rows, cols) = (sensor.image_height, sensor.image_width);
    let channels = RANGE_GEOMETRY_CHANNELS + scan.num_features;
    let cells = rows * cols;
    let mut point_index: Vec<Option<u32>> = vec![None; cells];
    let mut best_range = vec![f64::INFINITY; cells];
    let mut pixel_of_point = Vec::with_capacity(scan.len());

    for i in 0..scan.len() {
        let p = position_f64(scan, i);
        let r = scan.range_of(i);
        if !(r > 0.0) {
            return Err(Error::Domain(format!("point {i} is at the sensor origin")));
        }
        let (u, v) = pixel_coords(p, sensor);
        let cell = u * cols + v;
        pixel_of_point.push(cell);
        // Nearest wins; equal ranges keep the earlier point.
        if r < best_range[cell] {
            best_range[cell] = r;
            point_index[cell] = Some(i as u32);
        }
    }

    let mut grid = vec![0.0; cells * channels];
    let mut valid = vec![false; cells];
    for (cell, winner) in point_index.iter().enumerate() {
        if let Some(i) = *winner {
            let i = i as usize;
            valid[cell] = true;
            let [x, y, z] = position_f64(scan, i);
            let out = &mut grid[cell * channels..(cell + 1) * channels];
            out[0] = best_range[cell];
            out[1] = x;
            out[2] = y;
            out[3] = z;
            for (o, &f) in out[RANGE_GEOMETRY_CHANNELS..].iter_mut().zip(scan.feature_row(i)) {
                *o = f as f64;
            }
        }
    }
    Ok(RangeImage {
        height: rows,
        width: cols,
        channels,
        grid,
        valid,
        point_index,
        pixel_of_point,
    })
}

/// Each point takes the prediction of its pixel. Collision losers inherit
/// the winner's prediction.
pub fn range_to_points(img: &RangeImage, cat: &CategoricalGrid) -> Result<PointPredictions> {
    gather_points(cat, Domain::Range, img.num_cells(), &img.pixel_of_point)
}
