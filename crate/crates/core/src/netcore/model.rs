//! Per-cell segmentation networks for the two views.
//!
//! Each view has a one-hidden-layer trunk, a linear segmentation head and a
//! three-layer projector producing unit-length embeddings. Cells are rows of
//! a matrix, so a whole batch of scans is one forward pass.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{softmax_rows, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::projection::{CellGrid, Domain, SensorSpec, RANGE_GEOMETRY_CHANNELS};

pub const LEAKY_SLOPE: f64 = 0.01;
/// Trunk, segmentation head and three projector layers, weight and bias each.
pub const PARAMS_PER_VIEW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_classes: usize,
    pub range_in: usize,
    pub voxel_in: usize,
    pub range_hidden: usize,
    pub voxel_hidden: usize,
    pub embed_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in x out`
    pub weight: Tensor,
    /// `1 x out`
    pub bias: Tensor,
}

impl Dense {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Dense {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..=limit));
        Dense {
            weight,
            bias: Tensor::zeros((1, fan_out)),
        }
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewNet {
    pub trunk: Dense,
    pub seg: Dense,
    pub proj: [Dense; 3],
    /// Per-channel input multipliers applied before the trunk.
    pub input_scale: Vec<f64>,
}

fn leaky(x: Tensor) -> Tensor {
    x.mapv(|t| if t > 0.0 { t } else { LEAKY_SLOPE * t })
}

fn normalize(mut x: Tensor) -> Tensor {
    for mut row in x.rows_mut() {
        let n = row.dot(&row).sqrt().max(1e-12);
        row.mapv_inplace(|t| t / n);
    }
    x
}

/// Parameter handles of one view bound to a tape.
#[derive(Debug, Clone)]
pub struct BoundView {
    pub vars: Vec<Var>,
}

/// Tape outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ViewForward {
    pub hidden: Var,
    pub logits: Var,
}

impl ViewNet {
    pub fn new(input: usize, hidden: usize, classes: usize, embed: usize, rng: &mut ChaCha8Rng) -> ViewNet {
        ViewNet {
            trunk: Dense::glorot(input, hidden, rng),
            seg: Dense::glorot(hidden, classes, rng),
            proj: [
                Dense::glorot(hidden, hidden, rng),
                Dense::glorot(hidden, hidden, rng),
                Dense::glorot(hidden, embed, rng),
            ],
            input_scale: vec![1.0; input],
        }
    }

    pub fn input_width(&self) -> usize {
        self.trunk.weight.nrows()
    }

    pub fn params(&self) -> [&Tensor; PARAMS_PER_VIEW] {
        [
            &self.trunk.weight,
            &self.trunk.bias,
            &self.seg.weight,
            &self.seg.bias,
            &self.proj[0].weight,
            &self.proj[0].bias,
            &self.proj[1].weight,
            &self.proj[1].bias,
            &self.proj[2].weight,
            &self.proj[2].bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; PARAMS_PER_VIEW] {
        let [p0, p1, p2] = &mut self.proj;
        [
            &mut self.trunk.weight,
            &mut self.trunk.bias,
            &mut self.seg.weight,
            &mut self.seg.bias,
            &mut p0.weight,
            &mut p0.bias,
            &mut p1.weight,
            &mut p1.bias,
            &mut p2.weight,
            &mut p2.bias,
        ]
    }

    /// Scaled input rows for the given cells of a grid.
    pub fn inputs(&self, grid: &dyn CellGrid, cells: &[usize]) -> Result<Tensor> {
        if grid.channels() != self.input_width() {
            return Err(Error::Argument(format!(
                "grid has {} channels, network expects {}",
                grid.channels(),
                self.input_width()
            )));
        }
        let c = grid.channels();
        let mut x = Tensor::zeros((cells.len(), c));
        for (k, &cell) in cells.iter().enumerate() {
            for (j, (&v, &s)) in grid.cell(cell).iter().zip(&self.input_scale).enumerate() {
                x[[k, j]] = v * s;
            }
        }
        Ok(x)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundView {
        BoundView {
            vars: self.params().iter().map(|p| tape.leaf((*p).clone())).collect(),
        }
    }

    pub fn forward_tape(&self, tape: &mut Tape, bound: &BoundView, input: Var) -> ViewForward {
        let v = &bound.vars;
        let pre = tape.matmul(input, v[0]);
        let pre = tape.add_bias(pre, v[1]);
        let hidden = tape.leaky_relu(pre, LEAKY_SLOPE);
        let logits = tape.matmul(hidden, v[2]);
        let logits = tape.add_bias(logits, v[3]);
        ViewForward { hidden, logits }
    }

    /// Unit-length embeddings from trunk features.
    pub fn embed_tape(&self, tape: &mut Tape, bound: &BoundView, hidden: Var) -> Var {
        let v = &bound.vars;
        let mut h = hidden;
        for layer in 0..3 {
            let w = v[4 + 2 * layer];
            let b = v[5 + 2 * layer];
            h = tape.matmul(h, w);
            h = tape.add_bias(h, b);
            if layer < 2 {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        tape.normalize_rows(h)
    }

    pub fn hidden(&self, x: &Tensor) -> Tensor {
        leaky(self.trunk.apply(x))
    }

    pub fn logits(&self, x: &Tensor) -> Tensor {
        self.seg.apply(&self.hidden(x))
    }

    pub fn embed_from_hidden(&self, hidden: &Tensor) -> Tensor {
        let h = leaky(self.proj[0].apply(hidden));
        let h = leaky(self.proj[1].apply(&h));
        normalize(self.proj[2].apply(&h))
    }
}

/// Weights of both views.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub dims: ModelDims,
    pub range: ViewNet,
    pub voxel: ViewNet,
}

/// Input multipliers mapping raw grid channels to roughly unit scale.
pub fn default_input_scale(domain: Domain, channels: usize, sensor: &SensorSpec) -> Vec<f64> {
    let radial = 1.0 / sensor.radial_max;
    let height = 1.0 / sensor.z_min.abs().max(sensor.z_max.abs());
    let mut scale = vec![1.0; channels];
    match domain {
        Domain::Range => {
            scale[0] = radial;
            scale[1] = radial;
            scale[2] = radial;
            scale[3] = height;
        }
        Domain::Voxel => {
            scale[0] = radial;
            scale[1] = height;
            scale[channels - 1] = 1.0 / 3.0;
        }
    }
    scale
}

impl ModelState {
    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn new(dims: ModelDims, seed: u64) -> Result<ModelState> {
        if dims.num_classes < 2
            || [dims.range_in, dims.voxel_in, dims.range_hidden, dims.voxel_hidden, dims.embed_dim]
                .contains(&0)
        {
            return Err(Error::Config(format!("invalid model dims {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let range = ViewNet::new(dims.range_in, dims.range_hidden, dims.num_classes, dims.embed_dim, &mut rng);
        let voxel = ViewNet::new(dims.voxel_in, dims.voxel_hidden, dims.num_classes, dims.embed_dim, &mut rng);
        Ok(ModelState { dims, range, voxel })
    }

    /// Model sized for scans with `num_features` point channels, inputs
    /// scaled for the sensor.
    pub fn for_sensor(
        sensor: &SensorSpec,
        num_features: usize,
        num_classes: usize,
        hidden: (usize, usize),
        embed_dim: usize,
        seed: u64,
    ) -> Result<ModelState> {
        let dims = ModelDims {
            num_classes,
            range_in: RANGE_GEOMETRY_CHANNELS + num_features,
            voxel_in: crate::projection::VOXEL_EXTRA_CHANNELS + num_features,
            range_hidden: hidden.0,
            voxel_hidden: hidden.1,
            embed_dim,
        };
        let mut state = ModelState::new(dims, seed)?;
        state.range.input_scale = default_input_scale(Domain::Range, dims.range_in, sensor);
        state.voxel.input_scale = default_input_scale(Domain::Voxel, dims.voxel_in, sensor);
        Ok(state)
    }

    pub fn view(&self, domain: Domain) -> &ViewNet {
        match domain {
            Domain::Range => &self.range,
            Domain::Voxel => &self.voxel,
        }
    }

    pub fn view_mut(&mut self, domain: Domain) -> &mut ViewNet {
        match domain {
            Domain::Range => &mut self.range,
            Domain::Voxel => &mut self.voxel,
        }
    }

    /// All parameters, range view first.
    pub fn params(&self) -> Vec<&Tensor> {
        self.range.params().into_iter().chain(self.voxel.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let ModelState { range, voxel, .. } = self;
        range.params_mut().into_iter().chain(voxel.params_mut()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|x| x.is_finite()))
    }
}

/// Per-valid-cell logits of a grid, rows in `cells` order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellLogits {
    pub domain: Domain,
    pub num_cells: usize,
    pub cells: Vec<usize>,
    pub logits: Tensor,
}

pub fn forward_segment(state: &ModelState, grid: &dyn CellGrid) -> Result<CellLogits> {
    let net = state.view(grid.domain());
    let cells = grid.valid_cells();
    let x = net.inputs(grid, &cells)?;
    Ok(CellLogits {
        domain: grid.domain(),
        num_cells: grid.num_cells(),
        cells,
        logits: net.logits(&x),
    })
}

/// Unit-length embeddings of every valid cell, rows in valid-cell order.
pub fn forward_embed(state: &ModelState, grid: &dyn CellGrid) -> Result<Tensor> {
    let net = state.view(grid.domain());
    let cells = grid.valid_cells();
    let x = net.inputs(grid, &cells)?;
    Ok(net.embed_from_hidden(&net.hidden(&x)))
}

/// Row-wise softmax; rejects non-finite logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if let Some(bad) = logits.iter().find(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit {bad}")));
    }
    Ok(softmax_rows(logits))
}
