//! Class-wise Gaussian mixtures over projector embeddings, the virtual
//! prototypes drawn from them, and the prototype contrastive loss.

mod anchors;
mod contrastive;
mod gmm;

pub use anchors::{mine_anchors, AnchorSet};
pub use contrastive::{contrastive_loss, info_nce_with_grad, PrototypeSet};
pub use gmm::{
    ClassMixture, Component, CovarianceKind, EmMode, EmReport, GmmBank, SamplingMode,
};

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::netcore::Tensor;
use crate::projection::Domain;

/// One embedding with the (pseudo) label and confidence it was collected under.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSample {
    pub z: Vec<f64>,
    pub confidence: f64,
    pub label: usize,
    pub view: Domain,
}

/// Embedding rows of one view with per-row labels and confidences.
#[derive(Debug, Clone, Copy)]
pub struct ViewEmbeddings<'a> {
    pub domain: Domain,
    pub embeddings: &'a Tensor,
    pub labels: &'a [usize],
    pub confidence: &'a [f64],
}

/// Groups embeddings of all views by label, keeping at most `cap_per_class`
/// rows per class (a seeded uniform subsample, in original order).
pub fn collect_embeddings<R: Rng>(
    views: &[ViewEmbeddings<'_>],
    num_classes: usize,
    cap_per_class: usize,
    rng: &mut R,
) -> Result<Vec<Vec<EmbeddingSample>>> {
    let mut sets: Vec<Vec<EmbeddingSample>> = vec![Vec::new(); num_classes];
    for v in views {
        let n = v.embeddings.nrows();
        if v.labels.len() != n || v.confidence.len() != n {
            return Err(Error::Argument(format!(
                "{n} embeddings with {} labels and {} confidences",
                v.labels.len(),
                v.confidence.len()
            )));
        }
        for (i, (&y, &c)) in v.labels.iter().zip(v.confidence).enumerate() {
            if y >= num_classes {
                return Err(Error::Argument(format!("label {y} out of range")));
            }
            sets[y].push(EmbeddingSample {
                z: v.embeddings.row(i).to_vec(),
                confidence: c,
                label: y,
                view: v.domain,
            });
        }
    }
    for set in sets.iter_mut() {
        if set.len() > cap_per_class {
            let mut keep: Vec<usize> = sample(rng, set.len(), cap_per_class).into_vec();
            keep.sort_unstable();
            let mut taken = std::mem::take(set);
            *set = keep.into_iter().map(|i| std::mem::replace(&mut taken[i], placeholder())).collect();
        }
    }
    Ok(sets)
}

fn placeholder() -> EmbeddingSample {
    EmbeddingSample {
        z: Vec::new(),
        confidence: 0.0,
        label: 0,
        view: Domain::Range,
    }
}

/// Draws `per_class` prototypes for every initialized class.
pub fn sample_prototype_set<R: Rng>(
    bank: &GmmBank,
    per_class: usize,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<PrototypeSet> {
    let mut out = Vec::with_capacity(bank.num_classes);
    for c in 0..bank.num_classes {
        if bank.is_initialized(c) {
            out.push(bank.sample_prototypes(c, per_class, mode, rng)?);
        } else {
            out.push(Vec::new());
        }
    }
    Ok(PrototypeSet { per_class: out })
}
