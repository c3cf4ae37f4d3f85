use serde::{Deserialize, Serialize};

use super::PointScan;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitStrategy {
    /// Labelled scans evenly spread over the whole sequence.
    Uniform,
    /// A contiguous prefix is labelled.
    Partial,
}

impl std::str::FromStr for SplitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SplitStrategy::Uniform),
            "partial" => Ok(SplitStrategy::Partial),
            other => Err(Error::Argument(format!("unknown split strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub labelled: Vec<PointScan>,
    /// Labels replaced by the sentinel.
    pub unlabelled: Vec<PointScan>,
}

/// Indices of the labelled scans among `n`. The count is `ceil(fraction * n)`.
///
/// Uniform picks `floor(k * n / count) + offset` for `k` in `0..count`, where
/// the offset is `seed` reduced modulo the smallest gap so spacing stays even.
pub fn split_indices(
    n: usize,
    labelled_fraction: f64,
    strategy: SplitStrategy,
    seed: u64,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Argument("cannot split an empty dataset".into()));
    }
    if !(labelled_fraction > 0.0 && labelled_fraction <= 1.0) {
        return Err(Error::Argument(format!(
            "labelled fraction {labelled_fraction} outside (0, 1]"
        )));
    }
    // Guard against fractions like 0.1 * 100 = 10.000000000000002.
    let raw = labelled_fraction * n as f64;
    let count = ((raw - 1e-9).ceil() as usize).clamp(1, n);
    Ok(match strategy {
        SplitStrategy::Partial => (0..count).collect(),
        SplitStrategy::Uniform => {
            let base: Vec<usize> = (0..count).map(|k| k * n / count).collect();
            let last_gap = n - base[count - 1];
            let min_gap = base
                .windows(2)
                .map(|w| w[1] - w[0])
                .chain(std::iter::once(last_gap))
                .min()
                .unwrap_or(1);
            let offset = (seed % min_gap as u64) as usize;
            base.into_iter().map(|i| i + offset).collect()
        }
    })
}

pub fn split_dataset(
    scans: &[PointScan],
    labelled_fraction: f64,
    strategy: SplitStrategy,
    seed: u64,
) -> Result<Split> {
    let picked = split_indices(scans.len(), labelled_fraction, strategy, seed)?;
    let mut is_labelled = vec![false; scans.len()];
    for &i in &picked {
        is_labelled[i] = true;
    }
    let mut labelled = Vec::with_capacity(picked.len());
    let mut unlabelled = Vec::with_capacity(scans.len() - picked.len());
    for (scan, flag) in scans.iter().zip(is_labelled) {
        if flag {
            labelled.push(scan.clone());
        } else {
            unlabelled.push(scan.stripped());
        }
    }
    Ok(Split {
        labelled,
        unlabelled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_tenth_of_hundred() {
        let idx = split_indices(100, 0.1, SplitStrategy::Uniform, 0).unwrap();
        assert_eq!(idx, (0..10).map(|k| 10 * k).collect::<Vec<_>>());
        let shifted = split_indices(100, 0.1, SplitStrategy::Uniform, 3).unwrap();
        assert_eq!(shifted, (0..10).map(|k| 10 * k + 3).collect::<Vec<_>>());
    }

    #[test]
    fn partial_prefix() {
        let idx = split_indices(100, 0.1, SplitStrategy::Partial, 5).unwrap();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn ceiling_rounding() {
        // ceil(0.5 * 3) = 2
        assert_eq!(split_indices(3, 0.5, SplitStrategy::Uniform, 0).unwrap(), vec![0, 1]);
        assert_eq!(split_indices(7, 0.01, SplitStrategy::Uniform, 0).unwrap().len(), 1);
        assert_eq!(split_indices(4, 1.0, SplitStrategy::Uniform, 9).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(split_indices(0, 0.5, SplitStrategy::Uniform, 0).is_err());
        assert!(split_indices(5, 0.0, SplitStrategy::Uniform, 0).is_err());
        assert!(split_indices(5, 1.5, SplitStrategy::Partial, 0).is_err());
        assert!(split_dataset(&[], 0.5, SplitStrategy::Uniform, 0).is_err());
    }
}
