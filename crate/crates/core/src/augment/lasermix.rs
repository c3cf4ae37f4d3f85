use super::MixPlan;
use crate::error::{Error, Result};
use crate::projection::{label_grid, project_to_voxel, HardGrid, Repr, SensorSpec, VoxelGrid};
use crate::scanio::{PointScan, UNLABELLED};

/// A scan whose `labels` hold hard (pseudo) labels, with one confidence per
/// point and the sensor it was captured with.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledCloud {
    pub scan: PointScan,
    pub confidence: Vec<f64>,
    pub sensor: SensorSpec,
}

/// Mixed cloud and, for every output point, `(source, index)` with source
/// 0 for the first input and 1 for the second.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedCloud {
    pub cloud: LabelledCloud,
    pub source: Vec<(u8, usize)>,
}

/// A mixed cloud re-voxelized, with majority-vote voxel labels and mean
/// member confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedVoxel {
    pub mixed: MixedCloud,
    pub grid: VoxelGrid,
    pub labels: HardGrid,
}

/// Inclination band of a point: `[fov_down, fov_up]` cut into `bands`
/// equal slices, out-of-FOV points clamped to the edge bands.
pub fn band_of(p: [f32; 3], sensor: &SensorSpec, bands: usize) -> usize {
    let [x, y, z] = p.map(f64::from);
    let r = (x * x + y * y + z * z).sqrt();
    let pitch = (z / r).clamp(-1.0, 1.0).asin();
    let (up, down) = (sensor.fov_up_rad(), sensor.fov_down_rad());
    let t = ((pitch - down) / (up - down) * bands as f64).floor();
    t.clamp(0.0, bands as f64 - 1.0) as usize
}

fn check(a: &LabelledCloud, b: &LabelledCloud, bands: usize) -> Result<()> {
    if a.sensor != b.sensor {
        return Err(Error::Argument("scans come from different sensors".into()));
    }
    if a.scan.num_features != b.scan.num_features || a.scan.num_classes != b.scan.num_classes {
        return Err(Error::Argument("scans differ in feature or class count".into()));
    }
    for c in [a, b] {
        if c.confidence.len() != c.scan.len() {
            return Err(Error::Argument(format!(
                "{} confidences for {} points",
                c.confidence.len(),
                c.scan.len()
            )));
        }
    }
    if bands == 0 {
        return Err(Error::Argument("zero inclination bands".into()));
    }
    Ok(())
}

/// Even bands from `a`, odd bands from `b`. Points are emitted in index
/// order, interleaving the two inputs, so mixing a scan with itself is the
/// identity.
pub fn lasermix_points(a: &LabelledCloud, b: &LabelledCloud, bands: usize) -> Result<MixedCloud> {
    check(a, b, bands)?;
    let c = a.scan.num_features;
    let mut positions = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut confidence = Vec::new();
    let mut source = Vec::new();
    let n = a.scan.len().max(b.scan.len());
    for i in 0..n {
        for (s, cloud) in [(0u8, a), (1u8, b)] {
            if i >= cloud.scan.len() {
                continue;
            }
            if band_of(cloud.scan.positions[i], &cloud.sensor, bands) % 2 != s as usize {
                continue;
            }
            positions.push(cloud.scan.positions[i]);
            features.extend_from_slice(&cloud.scan.features[i * c..(i + 1) * c]);
            labels.push(cloud.scan.labels[i]);
            confidence.push(cloud.confidence[i]);
            source.push((s, i));
        }
    }
    let scan = PointScan {
        positions,
        features,
        num_features: c,
        labels,
        num_classes: a.scan.num_classes,
    };
    Ok(MixedCloud {
        cloud: LabelledCloud {
            scan,
            confidence,
            sensor: a.sensor.clone(),
        },
        source,
    })
}

/// LaserMix in point space followed by voxelization of the result.
pub fn lasermix_voxel(a: &LabelledCloud, b: &LabelledCloud, plan: &MixPlan) -> Result<MixedVoxel> {
    let mixed = lasermix_points(a, b, plan.bands)?;
    let scan = &mixed.cloud.scan;
    let grid = project_to_voxel(scan, &mixed.cloud.sensor)?;
    let mut labels = label_grid(Repr::Voxel(&grid), &scan.labels, scan.num_classes)?;
    for (cell, members) in grid.members.iter().enumerate() {
        if members.is_empty() || labels.labels[cell] == UNLABELLED {
            continue;
        }
        let sum: f64 = members.iter().map(|&m| mixed.cloud.confidence[m as usize]).sum();
        labels.confidence[cell] = sum / members.len() as f64;
    }
    Ok(MixedVoxel { mixed, grid, labels })
}
