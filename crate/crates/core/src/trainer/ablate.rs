//! Component ablation over shared seeds.

use rayon::prelude::*;

use super::config::{TrainConfig, Variant};
use super::data::Dataset;
use super::train::train;
use crate::error::{Error, Result};

pub const ABLATION_HEADER: &str = "config,seed,view,miou";

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub config: String,
    pub seed: u64,
    pub view: String,
    pub miou: Option<f64>,
}

/// Final-epoch held-out mIoU of every (variant, seed) run, per view. Runs
/// are independent, so `threads > 1` spreads them over a pool; the output
/// order does not depend on it.
pub fn ablate(
    base: &TrainConfig,
    variants: &[Variant],
    data: &Dataset,
    seeds: &[u64],
    threads: usize,
) -> Result<Vec<AblationRow>> {
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let run = |&(v, seed): &(Variant, u64)| -> Result<Vec<AblationRow>> {
        let outcome = train(&v.apply(base), data, seed)?;
        let last = outcome.records.last();
        let pick = |f: fn(&super::train::EpochRecord) -> Option<f64>| last.and_then(f);
        Ok([
            ("range", pick(|r| r.miou_range)),
            ("voxel", pick(|r| r.miou_voxel)),
            ("fused", pick(|r| r.miou_fused)),
        ]
        .into_iter()
        .map(|(view, miou)| AblationRow {
            config: v.name().to_string(),
            seed,
            view: view.to_string(),
            miou,
        })
        .collect())
    };
    let results: Vec<Result<Vec<AblationRow>>> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    } else {
        jobs.iter().map(run).collect()
    };
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        let miou = r.miou.map_or_else(|| "nan".to_string(), |m| format!("{m:.6}"));
        out.push_str(&format!("{},{},{},{}\n", r.config, r.seed, r.view, miou));
    }
    out
}

/// Mean and sample standard deviation per (config, view), in first-seen order.
pub fn summarize(rows: &[AblationRow]) -> Vec<(String, String, f64, f64)> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.config.clone(), r.view.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(c, v)| {
            let xs: Vec<f64> = rows
                .iter()
                .filter(|r| r.config == c && r.view == v)
                .filter_map(|r| r.miou)
                .collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = if xs.len() > 1 {
                xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (c, v, mean, var.sqrt())
        })
        .collect()
}
