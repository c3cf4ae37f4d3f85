//! Point scans: the in-memory model, the `IT2S` binary format, a procedural
//! scene generator and labelled/unlabelled splitting.

mod format;
mod scene;
mod split;

pub use format::{decode_scan, encode_scan, read_scan, write_scan, SCAN_MAGIC, SCAN_VERSION};
pub use scene::{generate_scene, ClassKind, SceneConfig};
pub use split::{split_dataset, split_indices, Split, SplitStrategy};

use crate::error::{Error, Result};

/// Label value marking a point without annotation.
pub const UNLABELLED: u16 = 0xFFFF;

/// A LiDAR scan: positions in meters relative to the sensor, per-point
/// feature channels, and per-point labels (`UNLABELLED` where unknown).
#[derive(Debug, Clone, PartialEq)]
pub struct PointScan {
    pub positions: Vec<[f32; 3]>,
    /// Row-major `N x num_features`.
    pub features: Vec<f32>,
    pub num_features: usize,
    pub labels: Vec<u16>,
    pub num_classes: usize,
}

impl PointScan {
    pub fn new(
        positions: Vec<[f32; 3]>,
        features: Vec<f32>,
        num_features: usize,
        labels: Vec<u16>,
        num_classes: usize,
    ) -> Result<Self> {
        let scan = PointScan {
            positions,
            features,
            num_features,
            labels,
            num_classes,
        };
        scan.validate()?;
        Ok(scan)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature_row(&self, i: usize) -> &[f32] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    /// Range of point `i` in f64.
    pub fn range_of(&self, i: usize) -> f64 {
        let [x, y, z] = self.positions[i];
        let (x, y, z) = (x as f64, y as f64, z as f64);
        (x * x + y * y + z * z).sqrt()
    }

    /// True when at least one point carries a real label.
    pub fn is_labelled(&self) -> bool {
        self.labels.iter().any(|&l| l != UNLABELLED)
    }

    /// Copy with every label replaced by the sentinel.
    pub fn stripped(&self) -> PointScan {
        PointScan {
            labels: vec![UNLABELLED; self.len()],
            ..self.clone()
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.num_classes];
        for &l in &self.labels {
            if l != UNLABELLED {
                hist[l as usize] += 1;
            }
        }
        hist
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.features.len() != n * self.num_features {
            return Err(Error::Argument(format!(
                "feature matrix has {} values, expected {} x {}",
                self.features.len(),
                n,
                self.num_features
            )));
        }
        if self.labels.len() != n {
            return Err(Error::Argument(format!(
                "{} labels for {} points",
                self.labels.len(),
                n
            )));
        }
        if self.num_classes == 0 || self.num_classes >= UNLABELLED as usize {
            return Err(Error::Argument(format!(
                "num_classes {} out of range",
                self.num_classes
            )));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::Domain(format!("point {i} has a non-finite coordinate")));
            }
            if *p == [0.0, 0.0, 0.0] {
                return Err(Error::Domain(format!("point {i} is at the sensor origin")));
            }
        }
        if let Some((i, &l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l != UNLABELLED && l as usize >= self.num_classes)
        {
            return Err(Error::Argument(format!(
                "point {i} has label {l} >= num_classes {}",
                self.num_classes
            )));
        }
        Ok(())
    }
}
