//! InfoNCE between anchor embeddings and sampled class prototypes.

use crate::error::{Error, Result};
use crate::netcore::{Tape, Tensor, Var};

use super::AnchorSet;

/// Unit-length prototypes per class; empty for classes without a mixture.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrototypeSet {
    pub per_class: Vec<Vec<Vec<f64>>>,
}

impl PrototypeSet {
    pub fn total(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean InfoNCE over every (anchor, positive prototype) pair, where the
/// negatives are all prototypes of other classes. Returns the value, its
/// gradient with respect to `anchors` and the number of pairs. Anchors of a
/// class without prototypes contribute nothing.
pub fn info_nce_with_grad(
    anchors: &Tensor,
    labels: &[usize],
    protos: &PrototypeSet,
    tau: f64,
) -> Result<(f64, Tensor, usize)> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Argument(format!("temperature must be positive, got {tau}")));
    }
    if anchors.nrows() != labels.len() {
        return Err(Error::Argument(format!(
            "{} anchors for {} labels",
            anchors.nrows(),
            labels.len()
        )));
    }
    let dim = anchors.ncols();
    if protos.per_class.iter().flatten().any(|p| p.len() != dim) {
        return Err(Error::Argument(format!("prototype length differs from embedding dim {dim}")));
    }
    let mut grad = Tensor::zeros(anchors.raw_dim());
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        let Some(positives) = protos.per_class.get(y) else {
            return Err(Error::Argument(format!("anchor label {y} has no prototype slot")));
        };
        if positives.is_empty() {
            continue;
        }
        let a = anchors.row(i).to_vec();
        let negatives: Vec<&Vec<f64>> = protos
            .per_class
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != y)
            .flat_map(|(_, ps)| ps.iter())
            .collect();
        let neg_logits: Vec<f64> = negatives.iter().map(|n| dot(&a, n) / tau).collect();
        let mut g = row_zero(dim);
        for p in positives {
            let pos = dot(&a, p) / tau;
            let max = neg_logits.iter().cloned().fold(pos, f64::max);
            let denom: f64 = (pos - max).exp() + neg_logits.iter().map(|l| (l - max).exp()).sum::<f64>();
            let log_denom = max + denom.ln();
            total += log_denom - pos;
            let w_pos = (pos - log_denom).exp();
            for d in 0..dim {
                g[d] -= (1.0 - w_pos) * p[d] / tau;
            }
            for (n, l) in negatives.iter().zip(&neg_logits) {
                let w = (l - log_denom).exp();
                for d in 0..dim {
                    g[d] += w * n[d] / tau;
                }
            }
            pairs += 1;
        }
        for d in 0..dim {
            grad[[i, d]] = g[d];
        }
    }
    if pairs == 0 {
        return Ok((0.0, grad, 0));
    }
    let inv = 1.0 / pairs as f64;
    grad.mapv_inplace(|v| v * inv);
    Ok((total * inv, grad, pairs))
}

fn row_zero(dim: usize) -> Vec<f64> {
    vec![0.0; dim]
}

/// Records the contrastive term on `tape`. `embeddings` must already be
/// unit-normalized rows; anchors index into them. `None` when no pair exists.
pub fn contrastive_loss(
    tape: &mut Tape,
    embeddings: Var,
    anchors: &AnchorSet,
    protos: &PrototypeSet,
    tau: f64,
) -> Result<Option<(Var, usize)>> {
    if anchors.is_empty() {
        if !(tau > 0.0) {
            return Err(Error::Argument(format!("temperature must be positive, got {tau}")));
        }
        return Ok(None);
    }
    if let Some(&r) = anchors.rows.iter().find(|&&r| r >= tape.value(embeddings).nrows()) {
        return Err(Error::Argument(format!("anchor row {r} out of range")));
    }
    let gathered = tape.gather_rows(embeddings, anchors.rows.clone());
    let (value, grad, pairs) = info_nce_with_grad(tape.value(gathered), &anchors.labels, protos, tau)?;
    if pairs == 0 {
        return Ok(None);
    }
    Ok(Some((tape.reduce(gathered, value, grad), pairs)))
}
