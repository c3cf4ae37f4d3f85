//! Cross-entropy and Lovász-softmax over rows of cells.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::netcore::{softmax_rows, Tape, Tensor, Var};

/// A recorded loss; `empty` flags that no cell contributed and the value is 0.
#[derive(Debug, Clone, Copy)]
pub struct LossTerm {
    pub value: Var,
    pub empty: bool,
}

fn check_targets(rows: usize, classes: usize, targets: &[usize]) -> Result<()> {
    if targets.len() != rows {
        return Err(Error::Argument(format!(
            "{} targets for {} cells",
            targets.len(),
            rows
        )));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::Argument(format!("target {t} >= {classes} classes")));
    }
    Ok(())
}

/// Mean of `-log softmax(logits)[target]` and its gradient wrt the logits.
pub fn cross_entropy_with_grad(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (n, y) = logits.dim();
    check_targets(n, y, targets)?;
    if n == 0 {
        return Ok((0.0, Tensor::zeros((0, y))));
    }
    let mut grad = softmax_rows(logits);
    let mut total = 0.0;
    for (k, &t) in targets.iter().enumerate() {
        let row = logits.row(k);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
        grad[[k, t]] -= 1.0;
    }
    grad /= n as f64;
    Ok((total / n as f64, grad))
}

/// Gradient of the Lovász extension of the Jaccard loss for errors sorted in
/// decreasing order, given the matching foreground indicators.
pub fn lovasz_grad(fg_sorted: &[f64]) -> Vec<f64> {
    let gts: f64 = fg_sorted.iter().sum();
    let mut cum_fg = 0.0;
    let mut cum_bg = 0.0;
    let mut jaccard = Vec::with_capacity(fg_sorted.len());
    for &f in fg_sorted {
        cum_fg += f;
        cum_bg += 1.0 - f;
        let intersection = gts - cum_fg;
        let union = gts + cum_bg;
        jaccard.push(1.0 - intersection / union);
    }
    let mut grad = jaccard.clone();
    for k in (1..grad.len()).rev() {
        grad[k] = jaccard[k] - jaccard[k - 1];
    }
    grad
}

/// Lovász-softmax averaged over the classes present in `targets`, with the
/// gradient wrt `probs` (sort order held fixed).
pub fn lovasz_softmax_with_grad(probs: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (n, y) = probs.dim();
    check_targets(n, y, targets)?;
    let mut grad = Tensor::zeros((n, y));
    let present: Vec<usize> = (0..y).filter(|&c| targets.contains(&c)).collect();
    if present.is_empty() {
        return Ok((0.0, grad));
    }
    let weight = 1.0 / present.len() as f64;
    let mut total = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut errors = vec![0.0; n];
    for &c in &present {
        for i in 0..n {
            let fg = if targets[i] == c { 1.0 } else { 0.0 };
            errors[i] = (fg - probs[[i, c]]).abs();
        }
        order.sort_by(|&a, &b| {
            errors[b]
                .partial_cmp(&errors[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        let fg_sorted: Vec<f64> = order
            .iter()
            .map(|&i| if targets[i] == c { 1.0 } else { 0.0 })
            .collect();
        let g = lovasz_grad(&fg_sorted);
        for (k, &i) in order.iter().enumerate() {
            total += weight * errors[i] * g[k];
            // d|fg - p|/dp is -1 on foreground, +1 elsewhere
            let sign = if targets[i] == c { -1.0 } else { 1.0 };
            grad[[i, c]] += weight * g[k] * sign;
        }
    }
    Ok((total, grad))
}

pub fn cross_entropy_loss(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<LossTerm> {
    let (value, grad) = cross_entropy_with_grad(tape.value(logits), targets)?;
    Ok(LossTerm {
        value: tape.reduce(logits, value, grad),
        empty: targets.is_empty(),
    })
}

/// `probs` must be row-stochastic; use [`Tape::softmax_rows`] on logits.
pub fn lovasz_softmax_loss(tape: &mut Tape, probs: Var, targets: &[usize]) -> Result<LossTerm> {
    let (value, grad) = lovasz_softmax_with_grad(tape.value(probs), targets)?;
    Ok(LossTerm {
        value: tape.reduce(probs, value, grad),
        empty: targets.is_empty(),
    })
}
