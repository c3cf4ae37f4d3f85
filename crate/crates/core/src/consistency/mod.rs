//! Cross-view supervision: pseudo labels transferred between the range and
//! voxel views, and the combined cross-entropy + Lovász-softmax objective over
//! labelled and pseudo-labelled cells of both views.

mod losses;

pub use losses::{
    cross_entropy_loss, cross_entropy_with_grad, lovasz_grad, lovasz_softmax_loss,
    lovasz_softmax_with_grad, LossTerm,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::netcore::{Tape, Var};
use crate::projection::{cross_transfer, HardGrid, RangeImage, Repr, SoftGrid, VoxelGrid};

/// Hard pseudo labels for each view, built from the other view's predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    /// From voxel predictions, on range pixels.
    pub range: HardGrid,
    /// From range predictions, on voxels.
    pub voxel: HardGrid,
}

/// Builds both pseudo-label grids. Inputs are plain values, so nothing here
/// is recorded on a tape and no gradient can reach the producing network.
pub fn make_pseudo_labels(
    range_probs: &SoftGrid,
    voxel_probs: &SoftGrid,
    range_img: &RangeImage,
    voxel_grid: &VoxelGrid,
) -> Result<PseudoLabels> {
    let range = cross_transfer(voxel_probs, Repr::Voxel(voxel_grid), Repr::Range(range_img))?;
    let voxel = cross_transfer(range_probs, Repr::Range(range_img), Repr::Voxel(voxel_grid))?;
    Ok(PseudoLabels { range, voxel })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    GroundTruth,
    Pseudo,
}

/// Logits of a set of cells (rows) and their hard targets.
#[derive(Debug, Clone)]
pub struct SupervisionBatch {
    pub logits: Var,
    pub targets: Vec<usize>,
    pub kind: TargetKind,
    pub confidence: Option<Vec<f64>>,
}

/// Supervision for one view: ground-truth cells and pseudo-labelled cells.
#[derive(Debug, Clone, Default)]
pub struct ViewSupervision {
    pub labelled: Option<SupervisionBatch>,
    pub pseudo: Option<SupervisionBatch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub cross_entropy: f64,
    pub lovasz: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cross_entropy: 1.0,
            lovasz: 1.0,
        }
    }
}

/// The four terms of the peer objective and their sum.
#[derive(Debug, Clone, Copy)]
pub struct It2Loss {
    pub total: Var,
    pub range_labelled: f64,
    pub range_pseudo: f64,
    pub voxel_labelled: f64,
    pub voxel_pseudo: f64,
}

impl It2Loss {
    pub fn range(&self) -> f64 {
        self.range_labelled + self.range_pseudo
    }

    pub fn voxel(&self) -> f64 {
        self.voxel_labelled + self.voxel_pseudo
    }
}

/// `weights.cross_entropy * CE + weights.lovasz * Lovasz` over one batch of
/// cells. `None` when the batch has no cells.
pub fn segmentation_loss(
    tape: &mut Tape,
    batch: &SupervisionBatch,
    weights: LossWeights,
) -> Result<Option<Var>> {
    if batch.targets.is_empty() {
        return Ok(None);
    }
    let ce = cross_entropy_loss(tape, batch.logits, &batch.targets)?;
    let probs = tape.softmax_rows(batch.logits);
    let lz = lovasz_softmax_loss(tape, probs, &batch.targets)?;
    let ce = tape.scale(ce.value, weights.cross_entropy);
    let lz = tape.scale(lz.value, weights.lovasz);
    Ok(Some(tape.add(ce, lz)))
}

/// `l_range + l_voxel`, each the sum of a ground-truth term and a
/// pseudo-label term. Empty terms contribute zero.
pub fn it2_loss(
    tape: &mut Tape,
    range: &ViewSupervision,
    voxel: &ViewSupervision,
    weights: LossWeights,
) -> Result<It2Loss> {
    it2_loss_ramped(tape, range, voxel, weights, 1.0)
}

/// [`it2_loss`] with both pseudo-label terms multiplied by `pseudo_weight`.
/// Reported pseudo components include the factor.
pub fn it2_loss_ramped(
    tape: &mut Tape,
    range: &ViewSupervision,
    voxel: &ViewSupervision,
    weights: LossWeights,
    pseudo_weight: f64,
) -> Result<It2Loss> {
    let mut parts = [0.0; 4];
    let mut total: Option<Var> = None;
    let batches = [&range.labelled, &range.pseudo, &voxel.labelled, &voxel.pseudo];
    for (slot, batch) in batches.into_iter().enumerate() {
        let Some(batch) = batch else { continue };
        if slot % 2 == 1 && pseudo_weight == 0.0 {
            continue;
        }
        if let Some(mut v) = segmentation_loss(tape, batch, weights)? {
            if slot % 2 == 1 && pseudo_weight != 1.0 {
                v = tape.scale(v, pseudo_weight);
            }
            parts[slot] = tape.scalar(v);
            total = Some(match total {
                Some(t) => tape.add(t, v),
                None => v,
            });
        }
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant_scalar(0.0),
    };
    Ok(It2Loss {
        total,
        range_labelled: parts[0],
        range_pseudo: parts[1],
        voxel_labelled: parts[2],
        voxel_pseudo: parts[3],
    })
}
