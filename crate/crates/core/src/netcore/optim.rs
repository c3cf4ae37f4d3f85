use serde::{Deserialize, Serialize};

use super::model::ModelState;
use super::tape::Tensor;
use crate::error::{Error, Result};

pub const POLY_POWER: f64 = 0.9;

/// `base_lr * (1 - iter / max_iter)^0.9`
pub fn poly_lr(base_lr: f64, iter: usize, max_iter: usize) -> f64 {
    if max_iter == 0 {
        return base_lr;
    }
    let frac = (iter.min(max_iter) as f64) / max_iter as f64;
    base_lr * (1.0 - frac).powf(POLY_POWER)
}

fn check_shapes(state: &ModelState, grads: &[Tensor]) -> Result<()> {
    let params = state.params();
    if params.len() != grads.len() {
        return Err(Error::Argument(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dim() != g.dim() {
            return Err(Error::Argument(format!(
                "gradient {i} has shape {:?}, parameter {:?}",
                g.dim(),
                p.dim()
            )));
        }
    }
    Ok(())
}

/// `w <- w - lr * g`
pub fn sgd_step(state: &mut ModelState, grads: &[Tensor], lr: f64) -> Result<()> {
    check_shapes(state, grads)?;
    for (p, g) in state.params_mut().into_iter().zip(grads) {
        p.scaled_add(-lr, g);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adamw,
}

/// Plain SGD, or AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, state: &ModelState) -> Optimizer {
        let zeros: Vec<Tensor> = state.params().iter().map(|p| Tensor::zeros(p.raw_dim())).collect();
        Optimizer {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
            first: zeros.clone(),
            second: zeros,
            steps: 0,
        }
    }

    pub fn step(&mut self, state: &mut ModelState, grads: &[Tensor], lr: f64) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(state, grads, lr),
            OptimizerKind::Adamw => {
                check_shapes(state, grads)?;
                self.steps += 1;
                let c1 = 1.0 - self.beta1.powi(self.steps);
                let c2 = 1.0 - self.beta2.powi(self.steps);
                for (((p, g), m), v) in state
                    .params_mut()
                    .into_iter()
                    .zip(grads)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    m.zip_mut_with(g, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
                    v.zip_mut_with(g, |vi, &gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
                    p.mapv_inplace(|w| w * (1.0 - lr * self.weight_decay));
                    ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|w, &mi, &vi| {
                        *w -= lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
                    });
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::ModelDims;

    #[test]
    fn poly_schedule() {
        assert_eq!(poly_lr(0.01, 0, 1000), 0.01);
        assert_eq!(poly_lr(0.01, 1000, 1000), 0.0);
        let mid = poly_lr(0.01, 500, 1000);
        assert!((mid - 0.01 * 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!((mid - 0.005359).abs() < 1e-6);
    }

    fn state() -> ModelState {
        ModelState::new(
            ModelDims {
                num_classes: 2,
                range_in: 2,
                voxel_in: 2,
                range_hidden: 2,
                voxel_hidden: 2,
                embed_dim: 2,
            },
            0,
        )
        .unwrap()
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut s = state();
        let before = s.clone();
        let grads: Vec<Tensor> = s.params().iter().map(|p| Tensor::ones(p.raw_dim())).collect();
        sgd_step(&mut s, &grads, 0.5).unwrap();
        for (a, b) in s.params().iter().zip(before.params()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - (y - 0.5)).abs() < 1e-15));
        }
        assert!(sgd_step(&mut s, &grads[1..], 0.5).is_err());
    }

    #[test]
    fn adamw_first_step_is_sign_sized() {
        let mut s = state();
        let before = s.clone();
        let mut opt = Optimizer::new(OptimizerKind::Adamw, &s);
        opt.weight_decay = 0.0;
        let grads: Vec<Tensor> = s.params().iter().map(|p| Tensor::from_elem(p.raw_dim(), 3.0)).collect();
        opt.step(&mut s, &grads, 0.1).unwrap();
        for (a, b) in s.params().iter().zip(before.params()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((y - x - 0.1).abs() < 1e-7);
            }
        }
    }
}
