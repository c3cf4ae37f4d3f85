//! Confusion matrices, IoU under both evaluation protocols, and view fusion.

use serde::{Deserialize, Serialize};

use super::data::PreparedScan;
use crate::error::{Error, Result};
use crate::netcore::{forward_segment, softmax, ModelState};
use crate::projection::{Repr, SoftGrid};
use crate::scanio::UNLABELLED;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// One confusion matrix accumulated over every evaluated point.
    #[default]
    Global,
    /// Mean of per-scan mIoU.
    Batchwise,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Protocol> {
        match s {
            "global" => Ok(Protocol::Global),
            "batchwise" => Ok(Protocol::Batchwise),
            _ => Err(Error::Usage(format!("unknown protocol {s:?} (global|batchwise)"))),
        }
    }
}

/// Rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    /// Counts every point with a ground-truth label.
    pub fn accumulate(&mut self, truth: &[u16], pred: &[u16]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::Argument(format!(
                "{} labels for {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let y = self.num_classes;
        for (&t, &p) in truth.iter().zip(pred) {
            if t == UNLABELLED {
                continue;
            }
            if t as usize >= y || p as usize >= y {
                return Err(Error::Argument(format!("label pair ({t}, {p}) outside {y} classes")));
            }
            self.counts[t as usize * y + p as usize] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `TP / (TP + FP + FN)`; `None` when the class is absent from both
    /// truth and prediction.
    pub fn iou(&self, class: usize) -> Option<f64> {
        let tp = self.get(class, class);
        let fn_: u64 = (0..self.num_classes).map(|p| self.get(class, p)).sum::<u64>() - tp;
        let fp: u64 = (0..self.num_classes).map(|t| self.get(t, class)).sum::<u64>() - tp;
        let denom = tp + fp + fn_;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.num_classes).map(|c| self.iou(c)).collect()
    }

    pub fn miou(&self) -> Option<f64> {
        mean_defined(&self.per_class_iou())
    }
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = v.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub miou: Option<f64>,
}

/// IoU of per-scan predictions under `protocol`.
pub fn iou_report(truth: &[&[u16]], pred: &[&[u16]], num_classes: usize, protocol: Protocol) -> Result<IouReport> {
    if truth.len() != pred.len() {
        return Err(Error::Argument(format!("{} truth scans for {} predictions", truth.len(), pred.len())));
    }
    match protocol {
        Protocol::Global => {
            let mut cm = ConfusionMatrix::new(num_classes);
            for (t, p) in truth.iter().zip(pred) {
                cm.accumulate(t, p)?;
            }
            Ok(IouReport {
                per_class: cm.per_class_iou(),
                miou: cm.miou(),
            })
        }
        Protocol::Batchwise => {
            let mut sums = vec![(0.0, 0usize); num_classes];
            let mut mious = Vec::new();
            for (t, p) in truth.iter().zip(pred) {
                let mut cm = ConfusionMatrix::new(num_classes);
                cm.accumulate(t, p)?;
                for (s, iou) in sums.iter_mut().zip(cm.per_class_iou()) {
                    if let Some(v) = iou {
                        s.0 += v;
                        s.1 += 1;
                    }
                }
                mious.push(cm.miou());
            }
            Ok(IouReport {
                per_class: sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect(),
                miou: mean_defined(&mious),
            })
        }
    }
}

/// Elementwise mean of two per-point probability tables and its argmax.
pub fn fuse_predictions(range: &[f64], voxel: &[f64], num_classes: usize) -> Result<(Vec<f64>, Vec<u16>)> {
    if range.len() != voxel.len() || num_classes == 0 || !range.len().is_multiple_of(num_classes) {
        return Err(Error::Argument(format!(
            "cannot fuse {} and {} probabilities over {num_classes} classes",
            range.len(),
            voxel.len()
        )));
    }
    let fused: Vec<f64> = range.iter().zip(voxel).map(|(a, b)| 0.5 * (a + b)).collect();
    let labels = hard_labels(&fused, num_classes);
    Ok((fused, labels))
}

/// Row argmax with ties to the smaller class.
pub fn hard_labels(probs: &[f64], num_classes: usize) -> Vec<u16> {
    probs
        .chunks_exact(num_classes)
        .map(|row| {
            let mut best = 0;
            for (k, &p) in row.iter().enumerate().skip(1) {
                if p > row[best] {
                    best = k;
                }
            }
            best as u16
        })
        .collect()
}

/// Per-point class probabilities of both views for one scan.
pub fn point_probabilities(state: &ModelState, scan: &PreparedScan) -> Result<(Vec<f64>, Vec<f64>)> {
    let y = state.dims.num_classes;
    let mut out = Vec::with_capacity(2);
    for repr in [Repr::Range(&scan.range), Repr::Voxel(&scan.voxel)] {
        let logits = match repr {
            Repr::Range(img) => forward_segment(state, img)?,
            Repr::Voxel(vox) => forward_segment(state, vox)?,
        };
        let probs = softmax(&logits.logits)?;
        let rows: Vec<f64> = probs.iter().copied().collect();
        let soft = SoftGrid::from_rows(logits.domain, y, logits.num_cells, &logits.cells, &rows)?;
        out.push(repr.to_points(&soft)?);
    }
    let voxel = out.pop().unwrap();
    let range = out.pop().unwrap();
    Ok((range, voxel))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub range: IouReport,
    pub voxel: IouReport,
    pub fused: IouReport,
}

/// Point-level IoU of the range view, the voxel view and their fusion.
pub fn evaluate(state: &ModelState, scans: &[PreparedScan], protocol: Protocol) -> Result<EvalReport> {
    let y = state.dims.num_classes;
    let mut preds: [Vec<Vec<u16>>; 3] = Default::default();
    for s in scans {
        if s.scan.num_classes != y {
            return Err(Error::Argument(format!(
                "scan has {} classes, model {y}",
                s.scan.num_classes
            )));
        }
        let (r, v) = point_probabilities(state, s)?;
        let (_, fused) = fuse_predictions(&r, &v, y)?;
        preds[0].push(hard_labels(&r, y));
        preds[1].push(hard_labels(&v, y));
        preds[2].push(fused);
    }
    let truth: Vec<&[u16]> = scans.iter().map(|s| s.scan.labels.as_slice()).collect();
    let report = |p: &Vec<Vec<u16>>| {
        let p: Vec<&[u16]> = p.iter().map(Vec::as_slice).collect();
        iou_report(&truth, &p, y, protocol)
    };
    Ok(EvalReport {
        range: report(&preds[0])?,
        voxel: report(&preds[1])?,
        fused: report(&preds[2])?,
    })
}
