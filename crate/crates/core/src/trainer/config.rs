use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::metrics::Protocol;
use crate::consistency::LossWeights;
use crate::error::{Error, Result};
use crate::netcore::OptimizerKind;
use crate::prototypes::{CovarianceKind, EmMode, SamplingMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Unlabelled scans per iteration.
    pub batch_size: usize,
    pub labelled_batch_size: usize,
    pub base_lr: f64,
    pub optimizer: OptimizerKind,
    pub range_hidden: usize,
    pub voxel_hidden: usize,
    pub embed_dim: usize,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Mixture components per class.
    pub components: usize,
    pub gmm_eps: f64,
    pub em_mode: EmMode,
    pub em_iters: usize,
    pub covariance: CovarianceKind,
    pub sampling: SamplingMode,
    /// Embeddings kept per class for each EM update.
    pub gmm_cap: usize,
    /// Labelled cells join the mixture sets with confidence 1.
    pub include_labelled_embeddings: bool,
    /// Epochs before mixtures start updating.
    pub warmup_epochs: usize,
    pub anchor_cap: usize,
    pub prototypes_per_class: usize,
    pub ema_alpha: f64,
    pub contrastive_weight: f64,
    pub loss_weights: LossWeights,
    /// Linear ramp of the pseudo-label terms over this many epochs; 0 = off.
    pub pseudo_ramp_epochs: usize,
    /// Cross-view pseudo supervision on unlabelled scans.
    pub unlabelled: bool,
    pub contrastive: bool,
    pub augment: bool,
    pub protocol: Protocol,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 4,
            labelled_batch_size: 2,
            base_lr: 0.05,
            optimizer: OptimizerKind::Sgd,
            range_hidden: 32,
            voxel_hidden: 32,
            embed_dim: 8,
            tau: 0.1,
            components: 5,
            gmm_eps: 1e-4,
            em_mode: EmMode::Standard,
            em_iters: 1,
            covariance: CovarianceKind::Full,
            sampling: SamplingMode::Gaussian,
            gmm_cap: 256,
            include_labelled_embeddings: true,
            warmup_epochs: 1,
            anchor_cap: 200,
            prototypes_per_class: 8,
            ema_alpha: 0.996,
            contrastive_weight: 1.0,
            loss_weights: LossWeights::default(),
            pseudo_ramp_epochs: 0,
            unlabelled: true,
            contrastive: true,
            augment: true,
            protocol: Protocol::Global,
            seeds: vec![0],
            output_dir: None,
        }
    }
}

/// Rows of the component ablation, cumulative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Supervised,
    It2,
    It2Contrastive,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Supervised, Variant::It2, Variant::It2Contrastive, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Supervised => "supervised",
            Variant::It2 => "it2",
            Variant::It2Contrastive => "it2+ctrs",
            Variant::Full => "it2+ctrs+aug",
        }
    }

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let (u, c, a) = match self {
            Variant::Supervised => (false, false, false),
            Variant::It2 => (true, false, false),
            Variant::It2Contrastive => (true, true, false),
            Variant::Full => (true, true, true),
        };
        TrainConfig {
            unlabelled: u,
            contrastive: c,
            augment: a,
            ..cfg.clone()
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown ablation row {s:?}")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.labelled_batch_size == 0 {
            return fail("batch sizes must be positive");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return fail("base_lr must be positive");
        }
        if self.range_hidden == 0 || self.voxel_hidden == 0 || self.embed_dim == 0 {
            return fail("layer widths must be positive");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail("tau must be positive");
        }
        if self.components == 0 || !(self.gmm_eps > 0.0) || self.gmm_cap == 0 {
            return fail("components, gmm_eps and gmm_cap must be positive");
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return fail("ema_alpha must lie in [0, 1]");
        }
        if self.contrastive_weight < 0.0 || self.loss_weights.cross_entropy < 0.0 || self.loss_weights.lovasz < 0.0 {
            return fail("loss weights must be non-negative");
        }
        Ok(())
    }
}
