use std::ops::Range;

use super::MixPlan;
use crate::error::{Error, Result};
use crate::projection::{CellGrid, Domain, HardGrid, RangeImage};

/// `batch` contiguous column strips covering `0..width`; the last absorbs
/// the remainder.
pub fn column_intervals(width: usize, batch: usize) -> Result<Vec<Range<usize>>> {
    if batch == 0 || width < batch {
        return Err(Error::Argument(format!(
            "cannot cut {width} columns into {batch} strips"
        )));
    }
    let step = width / batch;
    Ok((0..batch)
        .map(|j| {
            let end = if j + 1 == batch { width } else { (j + 1) * step };
            j * step..end
        })
        .collect())
}

/// A range image assembled from column strips of several scans.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedRange {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub grid: Vec<f64>,
    pub valid: Vec<bool>,
    pub labels: HardGrid,
    /// Batch element each column came from.
    pub column_source: Vec<usize>,
}

impl CellGrid for MixedRange {
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

/// Output `i` takes strip `j` from element `(i + j) mod B`, for inputs,
/// validity, labels and confidences alike.
pub fn cutmix_range(images: &[&RangeImage], labels: &[&HardGrid], plan: &MixPlan) -> Result<Vec<MixedRange>> {
    let b = images.len();
    if b != plan.batch || labels.len() != b {
        return Err(Error::Argument(format!(
            "{} images and {} label grids for a plan of batch {}",
            b,
            labels.len(),
            plan.batch
        )));
    }
    let first = images[0];
    let (h, w, c) = (first.height, first.width, first.channels);
    for (img, lab) in images.iter().zip(labels) {
        if (img.height, img.width, img.channels) != (h, w, c) {
            return Err(Error::Argument("range images differ in shape".into()));
        }
        if lab.domain != Domain::Range || lab.labels.len() != h * w {
            return Err(Error::Argument("label grid does not match the range image".into()));
        }
    }
    if plan.intervals.last().map(|r| r.end) != Some(w) {
        return Err(Error::Argument(format!("plan strips do not cover width {w}")));
    }
    let mut column_owner = vec![0usize; w];
    for (j, r) in plan.intervals.iter().enumerate() {
        for v in r.clone() {
            column_owner[v] = j;
        }
    }
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let column_source: Vec<usize> = column_owner.iter().map(|&j| (i + j) % b).collect();
        let mut grid = vec![0.0; h * w * c];
        let mut valid = vec![false; h * w];
        let mut lab = HardGrid {
            domain: Domain::Range,
            num_classes: labels[0].num_classes,
            labels: vec![0; h * w],
            confidence: vec![0.0; h * w],
            valid: vec![false; h * w],
        };
        for u in 0..h {
            for v in 0..w {
                let p = u * w + v;
                let s = column_source[v];
                grid[p * c..(p + 1) * c].copy_from_slice(images[s].cell(p));
                valid[p] = images[s].valid[p];
                lab.labels[p] = labels[s].labels[p];
                lab.confidence[p] = labels[s].confidence[p];
                lab.valid[p] = labels[s].valid[p];
            }
        }
        out.push(MixedRange {
            height: h,
            width: w,
            channels: c,
            grid,
            valid,
            labels: lab,
            column_source,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip_widths() {
        let s = column_intervals(10, 3).unwrap();
        assert_eq!(s, vec![0..3, 3..6, 6..10]);
        assert_eq!(column_intervals(8, 2).unwrap(), vec![0..4, 4..8]);
        assert!(column_intervals(2, 3).is_err());
        assert!(column_intervals(4, 0).is_err());
    }
}
