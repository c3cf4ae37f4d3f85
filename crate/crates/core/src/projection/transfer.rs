use super::categorical::argmax;
use super::{CellGrid, Domain, HardGrid, RangeImage, SoftGrid, VoxelGrid};
use crate::error::{Error, Result};
use crate::scanio::UNLABELLED;

/// A gridded view of a scan, either kind.
#[derive(Debug, Clone, Copy)]
pub enum Repr<'a> {
    Range(&'a RangeImage),
    Voxel(&'a VoxelGrid),
}

impl<'a> Repr<'a> {
    pub fn domain(&self) -> Domain {
        match self {
            Repr::Range(_) => Domain::Range,
            Repr::Voxel(_) => Domain::Voxel,
        }
    }

    pub fn num_points(&self) -> usize {
        match self {
            Repr::Range(r) => r.num_points(),
            Repr::Voxel(v) => v.num_points(),
        }
    }

    pub fn num_cells(&self) -> usize {
        match self {
            Repr::Range(r) => r.num_cells(),
            Repr::Voxel(v) => v.num_cells(),
        }
    }

    pub fn cell_of_point(&self) -> &'a [usize] {
        match self {
            Repr::Range(r) => &r.pixel_of_point,
            Repr::Voxel(v) => &v.voxel_of_point,
        }
    }

    /// Per-point probability rows (`N x Y`) read from the cells.
    pub fn to_points(&self, soft: &SoftGrid) -> Result<Vec<f64>> {
        if soft.domain != self.domain() || soft.num_cells() != self.num_cells() {
            return Err(Error::Argument(format!(
                "{:?} grid with {} cells does not fit a {:?} view with {} cells",
                soft.domain,
                soft.num_cells(),
                self.domain(),
                self.num_cells()
            )));
        }
        let y = soft.num_classes;
        let mut out = Vec::with_capacity(self.num_points() * y);
        for &c in self.cell_of_point() {
            out.extend_from_slice(soft.row(c));
        }
        Ok(out)
    }

    /// Cell probabilities from per-point rows. A range pixel takes its winning
    /// point; a voxel takes the mean over its members.
    pub fn from_points(&self, point_probs: &[f64], num_classes: usize) -> Result<SoftGrid> {
        let y = num_classes;
        if point_probs.len() != self.num_points() * y {
            return Err(Error::Argument(format!(
                "{} probability values for {} points x {} classes",
                point_probs.len(),
                self.num_points(),
                y
            )));
        }
        let cells = self.num_cells();
        let mut probs = vec![0.0; cells * y];
        let mut valid = vec![false; cells];
        match self {
            Repr::Range(img) => {
                for (c, winner) in img.point_index.iter().enumerate() {
                    if let Some(i) = *winner {
                        let i = i as usize;
                        valid[c] = true;
                        probs[c * y..(c + 1) * y].copy_from_slice(&point_probs[i * y..(i + 1) * y]);
                    }
                }
            }
            Repr::Voxel(vox) => {
                for (c, ids) in vox.members.iter().enumerate() {
                    if ids.is_empty() {
                        continue;
                    }
                    valid[c] = true;
                    let row = &mut probs[c * y..(c + 1) * y];
                    for &i in ids {
                        let i = i as usize;
                        for (r, p) in row.iter_mut().zip(&point_probs[i * y..(i + 1) * y]) {
                            *r += p;
                        }
                    }
                    let n = ids.len() as f64;
                    row.iter_mut().for_each(|r| *r /= n);
                }
            }
        }
        Ok(SoftGrid {
            domain: self.domain(),
            num_classes: y,
            probs,
            valid,
        })
    }
}

fn check_same_scan(src: &Repr, dst: &Repr) -> Result<()> {
    if src.num_points() != dst.num_points() {
        return Err(Error::Argument(format!(
            "views come from different scans ({} vs {} points)",
            src.num_points(),
            dst.num_points()
        )));
    }
    Ok(())
}

/// Soft composition of the to-point and to-grid maps.
pub fn transfer_soft(src_cat: &SoftGrid, src: Repr, dst: Repr) -> Result<SoftGrid> {
    check_same_scan(&src, &dst)?;
    let points = src.to_points(src_cat)?;
    dst.from_points(&points, src_cat.num_classes)
}

/// Carries soft predictions from one view to the other, then takes the
/// argmax as label and the max as confidence on each destination cell.
pub fn cross_transfer(src_cat: &SoftGrid, src: Repr, dst: Repr) -> Result<HardGrid> {
    Ok(transfer_soft(src_cat, src, dst)?.harden())
}

/// Hard ground-truth grid from per-point labels. A range pixel takes its
/// winner's label; a voxel takes the majority of its labelled members, ties
/// to the smaller class. Cells without any labelled point are invalid.
pub fn label_grid(repr: Repr, point_labels: &[u16], num_classes: usize) -> Result<HardGrid> {
    if point_labels.len() != repr.num_points() {
        return Err(Error::Argument(format!(
            "{} labels for {} points",
            point_labels.len(),
            repr.num_points()
        )));
    }
    let cells = repr.num_cells();
    let mut labels = vec![UNLABELLED; cells];
    let mut confidence = vec![0.0; cells];
    let mut valid = vec![false; cells];
    match repr {
        Repr::Range(img) => {
            for (c, winner) in img.point_index.iter().enumerate() {
                if let Some(i) = *winner {
                    let l = point_labels[i as usize];
                    if l != UNLABELLED {
                        labels[c] = l;
                        confidence[c] = 1.0;
                        valid[c] = true;
                    }
                }
            }
        }
        Repr::Voxel(vox) => {
            let mut votes = vec![0.0; num_classes];
            for (c, ids) in vox.members.iter().enumerate() {
                votes.iter_mut().for_each(|v| *v = 0.0);
                let mut any = false;
                for &i in ids {
                    let l = point_labels[i as usize];
                    if l != UNLABELLED {
                        votes[l as usize] += 1.0;
                        any = true;
                    }
                }
                if any {
                    let (k, _) = argmax(&votes);
                    labels[c] = k as u16;
                    confidence[c] = 1.0;
                    valid[c] = true;
                }
            }
        }
    }
    Ok(HardGrid {
        domain: repr.domain(),
        num_classes,
        labels,
        confidence,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::{project_to_range, project_to_voxel, SensorSpec};
    use crate::scanio::{generate_scene, PointScan, SceneConfig};

    fn constant_soft(domain: Domain, valid: &[bool], row: &[f64]) -> SoftGrid {
        let y = row.len();
        let mut probs = vec![0.0; valid.len() * y];
        for (c, &v) in valid.iter().enumerate() {
            if v {
                probs[c * y..(c + 1) * y].copy_from_slice(row);
            }
        }
        SoftGrid {
            domain,
            num_classes: y,
            probs,
            valid: valid.to_vec(),
        }
    }

    fn views() -> (PointScan, RangeImage, VoxelGrid) {
        let scan = generate_scene(&SceneConfig {
            points_per_scan: 300,
            rng_seed: 3,
            ..Default::default()
        })
        .unwrap();
        let sensor = SensorSpec::default();
        let img = project_to_range(&scan, &sensor).unwrap();
        let vox = project_to_voxel(&scan, &sensor).unwrap();
        (scan, img, vox)
    }

    #[test]
    fn constant_voxel_prediction_transfers() {
        let (_, img, vox) = views();
        let src = constant_soft(Domain::Voxel, &vox.occupied, &[0.05, 0.9, 0.03, 0.02]);
        let hard = cross_transfer(&src, Repr::Voxel(&vox), Repr::Range(&img)).unwrap();
        for c in 0..img.num_cells() {
            assert_eq!(hard.valid[c], img.valid[c]);
            if img.valid[c] {
                assert_eq!(hard.labels[c], 1);
                assert!((hard.confidence[c] - 0.9).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_prediction_ties_to_class_zero() {
        let (_, img, vox) = views();
        let src = constant_soft(Domain::Range, &img.valid, &[0.25; 4]);
        let hard = cross_transfer(&src, Repr::Range(&img), Repr::Voxel(&vox)).unwrap();
        for c in vox.valid_cells() {
            assert_eq!(hard.labels[c], 0);
            assert!((hard.confidence[c] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_scans_rejected() {
        let (_, img, _) = views();
        let other = generate_scene(&SceneConfig {
            points_per_scan: 100,
            ..Default::default()
        })
        .unwrap();
        let vox = project_to_voxel(&other, &SensorSpec::default()).unwrap();
        let src = constant_soft(Domain::Range, &img.valid, &[0.25; 4]);
        assert!(matches!(
            cross_transfer(&src, Repr::Range(&img), Repr::Voxel(&vox)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn voxel_majority_vote() {
        let (scan, _, vox) = views();
        let hard = label_grid(Repr::Voxel(&vox), &scan.labels, 4).unwrap();
        for c in vox.valid_cells() {
            let mut counts = [0usize; 4];
            for &i in &vox.members[c] {
                counts[scan.labels[i as usize] as usize] += 1;
            }
            let best = *counts.iter().max().unwrap();
            let expected = counts.iter().position(|&n| n == best).unwrap();
            assert_eq!(hard.labels[c] as usize, expected);
        }
    }
}
