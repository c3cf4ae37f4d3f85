use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scanio::UNLABELLED;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Range,
    Voxel,
}

/// Per-cell class distributions. Invalid cells hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftGrid {
    pub domain: Domain,
    pub num_classes: usize,
    /// Row-major `cells x num_classes`.
    pub probs: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Per-cell hard labels with confidences. Invalid cells carry `UNLABELLED`.
#[derive(Debug, Clone, PartialEq)]
pub struct HardGrid {
    pub domain: Domain,
    pub num_classes: usize,
    pub labels: Vec<u16>,
    pub confidence: Vec<f64>,
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CategoricalGrid {
    Soft(SoftGrid),
    Hard(HardGrid),
}

/// Predictions carried back onto the points of a scan.
#[derive(Debug, Clone, PartialEq)]
pub enum PointPredictions {
    Soft { num_classes: usize, probs: Vec<f64> },
    Hard { labels: Vec<u16>, confidence: Vec<f64> },
}

/// Index of the largest entry; ties go to the smallest index.
pub(crate) fn argmax(v: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    (best, v[best])
}

impl SoftGrid {
    pub fn num_cells(&self) -> usize {
        self.valid.len()
    }

    pub fn row(&self, cell: usize) -> &[f64] {
        &self.probs[cell * self.num_classes..(cell + 1) * self.num_classes]
    }

    /// Builds a grid from per-valid-cell rows, in `cells` order.
    pub fn from_rows(
        domain: Domain,
        num_classes: usize,
        num_cells: usize,
        cells: &[usize],
        rows: &[f64],
    ) -> Result<SoftGrid> {
        if rows.len() != cells.len() * num_classes {
            return Err(Error::Argument(format!(
                "{} probability values for {} cells x {} classes",
                rows.len(),
                cells.len(),
                num_classes
            )));
        }
        let mut probs = vec![0.0; num_cells * num_classes];
        let mut valid = vec![false; num_cells];
        for (k, &c) in cells.iter().enumerate() {
            valid[c] = true;
            probs[c * num_classes..(c + 1) * num_classes]
                .copy_from_slice(&rows[k * num_classes..(k + 1) * num_classes]);
        }
        Ok(SoftGrid {
            domain,
            num_classes,
            probs,
            valid,
        })
    }

    /// Argmax labels and max confidences on valid cells.
    pub fn harden(&self) -> HardGrid {
        let n = self.num_cells();
        let mut labels = vec![UNLABELLED; n];
        let mut confidence = vec![0.0; n];
        for c in 0..n {
            if self.valid[c] {
                let (k, p) = argmax(self.row(c));
                labels[c] = k as u16;
                confidence[c] = p;
            }
        }
        HardGrid {
            domain: self.domain,
            num_classes: self.num_classes,
            labels,
            confidence,
            valid: self.valid.clone(),
        }
    }

    pub fn check_simplex(&self, tol: f64) -> Result<()> {
        for c in 0..self.num_cells() {
            if !self.valid[c] {
                continue;
            }
            let row = self.row(c);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > tol {
                return Err(Error::Numeric(format!("cell {c} is not on the simplex (sum {sum})")));
            }
        }
        Ok(())
    }
}

impl HardGrid {
    pub fn num_cells(&self) -> usize {
        self.valid.len()
    }

    pub fn one_hot(&self) -> SoftGrid {
        let y = self.num_classes;
        let mut probs = vec![0.0; self.num_cells() * y];
        for (c, (&l, &v)) in self.labels.iter().zip(&self.valid).enumerate() {
            if v {
                probs[c * y + l as usize] = 1.0;
            }
        }
        SoftGrid {
            domain: self.domain,
            num_classes: y,
            probs,
            valid: self.valid.clone(),
        }
    }
}

impl CategoricalGrid {
    pub fn domain(&self) -> Domain {
        match self {
            CategoricalGrid::Soft(s) => s.domain,
            CategoricalGrid::Hard(h) => h.domain,
        }
    }

    pub fn num_cells(&self) -> usize {
        match self {
            CategoricalGrid::Soft(s) => s.num_cells(),
            CategoricalGrid::Hard(h) => h.num_cells(),
        }
    }
}

impl PointPredictions {
    pub fn len(&self) -> usize {
        match self {
            PointPredictions::Soft { num_classes, probs } => probs.len() / num_classes,
            PointPredictions::Hard { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hard labels; soft predictions are argmaxed.
    pub fn labels(&self) -> Vec<u16> {
        match self {
            PointPredictions::Soft { num_classes, probs } => probs
                .chunks(*num_classes)
                .map(|row| argmax(row).0 as u16)
                .collect(),
            PointPredictions::Hard { labels, .. } => labels.clone(),
        }
    }
}

/// Gathers per-point predictions from cell predictions through `cell_of_point`.
pub(crate) fn gather_points(
    cat: &CategoricalGrid,
    domain: Domain,
    num_cells: usize,
    cell_of_point: &[usize],
) -> Result<PointPredictions> {
    if cat.domain() != domain {
        return Err(Error::Argument(format!(
            "expected a {domain:?} grid, got {:?}",
            cat.domain()
        )));
    }
    if cat.num_cells() != num_cells {
        return Err(Error::Argument(format!(
            "grid has {} cells, representation has {num_cells}",
            cat.num_cells()
        )));
    }
    Ok(match cat {
        CategoricalGrid::Soft(s) => {
            let y = s.num_classes;
            let mut probs = Vec::with_capacity(cell_of_point.len() * y);
            for &c in cell_of_point {
                probs.extend_from_slice(s.row(c));
            }
            PointPredictions::Soft {
                num_classes: y,
                probs,
            }
        }
        CategoricalGrid::Hard(h) => PointPredictions::Hard {
            labels: cell_of_point.iter().map(|&c| h.labels[c]).collect(),
            confidence: cell_of_point.iter().map(|&c| h.confidence[c]).collect(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]).0, 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]).0, 1);
    }

    #[test]
    fn harden_matches_max() {
        let g = SoftGrid::from_rows(Domain::Range, 3, 3, &[0, 2], &[0.2, 0.5, 0.3, 0.6, 0.1, 0.3])
            .unwrap();
        let h = g.harden();
        assert_eq!(h.labels, vec![1, UNLABELLED, 0]);
        assert_eq!(h.confidence, vec![0.5, 0.0, 0.6]);
        assert_eq!(h.valid, vec![true, false, true]);
    }
}
