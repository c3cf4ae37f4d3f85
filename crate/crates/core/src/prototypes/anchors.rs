//! Easy/hard anchor selection for the contrastive term.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// Rows chosen as anchors, with their target labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnchorSet {
    pub rows: Vec<usize>,
    pub labels: Vec<usize>,
    pub easy: usize,
    pub hard: usize,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn pick<R: Rng>(pool: &[usize], k: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    if k >= pool.len() {
        return (pool.to_vec(), Vec::new());
    }
    let mut chosen = vec![false; pool.len()];
    for i in sample(rng, pool.len(), k) {
        chosen[i] = true;
    }
    let (mut taken, mut rest) = (Vec::new(), Vec::new());
    for (&row, c) in pool.iter().zip(chosen) {
        if c {
            taken.push(row);
        } else {
            rest.push(row);
        }
    }
    (taken, rest)
}

/// Up to `cap` anchors: half from rows predicted correctly (easy), half from
/// rows predicted wrongly (hard). A short pool is backfilled from the other.
/// Rows whose target is `None` are never anchors.
pub fn mine_anchors<R: Rng>(
    predicted: &[usize],
    targets: &[Option<usize>],
    cap: usize,
    rng: &mut R,
) -> Result<AnchorSet> {
    if predicted.len() != targets.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} targets",
            predicted.len(),
            targets.len()
        )));
    }
    let mut easy_pool = Vec::new();
    let mut hard_pool = Vec::new();
    for (row, (&p, t)) in predicted.iter().zip(targets).enumerate() {
        match t {
            Some(t) if *t == p => easy_pool.push(row),
            Some(_) => hard_pool.push(row),
            None => {}
        }
    }
    let half = cap / 2;
    let (mut easy, easy_rest) = pick(&easy_pool, half, rng);
    let (mut hard, hard_rest) = pick(&hard_pool, cap - half, rng);
    let mut room = cap - easy.len() - hard.len();
    if room > 0 && !hard_rest.is_empty() {
        let (extra, _) = pick(&hard_rest, room, rng);
        room -= extra.len();
        hard.extend(extra);
    }
    if room > 0 && !easy_rest.is_empty() {
        let (extra, _) = pick(&easy_rest, room, rng);
        easy.extend(extra);
    }
    easy.sort_unstable();
    hard.sort_unstable();
    let (ne, nh) = (easy.len(), hard.len());
    let rows: Vec<usize> = easy.into_iter().chain(hard).collect();
    let labels = rows.iter().map(|&r| targets[r].expect("anchor has a target")).collect();
    Ok(AnchorSet {
        rows,
        labels,
        easy: ne,
        hard: nh,
    })
}
