//! Scans with their projections precomputed, grouped by role.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{
    label_grid, project_to_range, project_to_voxel, HardGrid, RangeImage, Repr, SensorSpec, VoxelGrid,
};
use crate::scanio::{generate_scene, split_indices, PointScan, SceneConfig, SplitStrategy};

/// A scan with both projections and, when labelled, its label grids
/// (all-invalid otherwise).
#[derive(Debug, Clone)]
pub struct PreparedScan {
    pub scan: PointScan,
    pub range: RangeImage,
    pub voxel: VoxelGrid,
    pub range_labels: HardGrid,
    pub voxel_labels: HardGrid,
}

pub fn prepare_scan(scan: PointScan, sensor: &SensorSpec) -> Result<PreparedScan> {
    let range = project_to_range(&scan, sensor)?;
    let voxel = project_to_voxel(&scan, sensor)?;
    let range_labels = label_grid(Repr::Range(&range), &scan.labels, scan.num_classes)?;
    let voxel_labels = label_grid(Repr::Voxel(&voxel), &scan.labels, scan.num_classes)?;
    Ok(PreparedScan {
        scan,
        range,
        voxel,
        range_labels,
        voxel_labels,
    })
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub sensor: SensorSpec,
    pub num_classes: usize,
    pub num_features: usize,
    pub labelled: Vec<PreparedScan>,
    pub unlabelled: Vec<PreparedScan>,
    pub heldout: Vec<PreparedScan>,
}

impl Dataset {
    pub fn new(
        sensor: SensorSpec,
        labelled: Vec<PointScan>,
        unlabelled: Vec<PointScan>,
        heldout: Vec<PointScan>,
    ) -> Result<Dataset> {
        sensor.validate()?;
        let first = labelled
            .first()
            .ok_or_else(|| Error::Argument("dataset has no labelled scans".into()))?;
        let (y, c) = (first.num_classes, first.num_features);
        for s in labelled.iter().chain(&unlabelled).chain(&heldout) {
            if s.num_classes != y || s.num_features != c {
                return Err(Error::Argument(format!(
                    "scan with {} classes and {} features in a dataset of {y} classes and {c} features",
                    s.num_classes, s.num_features
                )));
            }
        }
        let prep = |v: Vec<PointScan>| -> Result<Vec<PreparedScan>> {
            v.into_iter().map(|s| prepare_scan(s, &sensor)).collect()
        };
        Ok(Dataset {
            labelled: prep(labelled)?,
            unlabelled: prep(unlabelled)?,
            heldout: prep(heldout)?,
            sensor,
            num_classes: y,
            num_features: c,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Labelled,
    Unlabelled,
    Heldout,
}

/// Fraction of generated scans reserved for evaluation.
pub const HELDOUT_FRACTION: f64 = 0.2;

/// Role of each of `total` scans: `ceil(fraction * total)` labelled by the
/// split rule, then 20% of the total drawn (seeded) from the rest as
/// held-out, the remainder unlabelled.
pub fn assign_roles(total: usize, fraction: f64, strategy: SplitStrategy, seed: u64) -> Result<Vec<Role>> {
    let labelled = split_indices(total, fraction, strategy, seed)?;
    let mut roles = vec![Role::Unlabelled; total];
    for &i in &labelled {
        roles[i] = Role::Labelled;
    }
    let rest: Vec<usize> = (0..total).filter(|&i| roles[i] != Role::Labelled).collect();
    let want = ((HELDOUT_FRACTION * total as f64).round() as usize).min(rest.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4845_4c44);
    for k in rand::seq::index::sample(&mut rng, rest.len(), want) {
        roles[rest[k]] = Role::Heldout;
    }
    Ok(roles)
}

/// Scene seed of scan `index` in a dataset generated from `base`.
pub fn scan_seed(base: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// `total` scenes, each generated from its own derived seed.
pub fn generate_scans(scene: &SceneConfig, total: usize) -> Result<Vec<PointScan>> {
    (0..total)
        .map(|i| generate_scene(&scene.with_seed(scan_seed(scene.rng_seed, i))))
        .collect()
}

/// Generated scans split into roles; unlabelled scans lose their labels.
pub fn synthetic_dataset(
    scene: &SceneConfig,
    sensor: &SensorSpec,
    total: usize,
    fraction: f64,
    strategy: SplitStrategy,
    split_seed: u64,
) -> Result<Dataset> {
    let scans = generate_scans(scene, total)?;
    let roles = assign_roles(total, fraction, strategy, split_seed)?;
    let (mut lab, mut unl, mut held) = (Vec::new(), Vec::new(), Vec::new());
    for (scan, role) in scans.into_iter().zip(roles) {
        match role {
            Role::Labelled => lab.push(scan),
            Role::Unlabelled => unl.push(scan.stripped()),
            Role::Heldout => held.push(scan),
        }
    }
    Dataset::new(sensor.clone(), lab, unl, held)
}
