#![allow(dead_code)]

use std::io::Write;

use it2::consistency::{
    cross_entropy_loss, it2_loss, lovasz_softmax_loss, LossWeights, SupervisionBatch, TargetKind, ViewSupervision,
};
use it2::netcore::{softmax_rows, ModelDims, ModelState, Tape, Tensor, Var, ViewNet, LEAKY_SLOPE};
use it2::projection::{project_to_range, project_to_voxel, SensorSpec};
use it2::prototypes::{contrastive_loss, AnchorSet, PrototypeSet};
use it2::scanio::PointScan;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Written straight to stderr so the line shows up without `--nocapture`.
pub fn report(id: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id:>2} {name:<24} {verdict}  {detail}");
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

pub fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Lovasz,
    InfoNce,
    /// Peer segmentation loss of both views plus both contrastive terms.
    Combined,
}

/// A small two-view model with a batch of cells for each view. Rows before
/// `labelled` carry ground truth, the rest pseudo labels.
#[derive(Debug, Clone)]
pub struct Instance {
    pub kind: LossKind,
    pub model: ModelState,
    pub inputs: [Tensor; 2],
    pub targets: [Vec<usize>; 2],
    pub labelled: usize,
    pub protos: PrototypeSet,
    pub tau: f64,
}

const KINK_MARGIN: f64 = 1e-3;

fn leaky(x: &Tensor) -> Tensor {
    x.mapv(|t| if t > 0.0 { t } else { LEAKY_SLOPE * t })
}

fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    x.dot(w) + b
}

fn min_abs(x: &Tensor) -> f64 {
    x.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Smallest gap between distinct-rank Lovász errors of any present class.
fn lovasz_gap(logits: &Tensor, targets: &[usize]) -> f64 {
    let probs = softmax_rows(logits);
    let mut gap = f64::INFINITY;
    for c in 0..probs.ncols() {
        if !targets.contains(&c) {
            continue;
        }
        let mut e: Vec<f64> = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| ((t == c) as u8 as f64 - probs[[i, c]]).abs())
            .collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in e.windows(2) {
            gap = gap.min(w[1] - w[0]);
        }
    }
    gap
}

/// True when every leaky unit and every Lovász sort key sits at least
/// `KINK_MARGIN` away from a point where the loss is not differentiable.
fn smooth_enough(inst: &Instance) -> bool {
    for v in 0..2 {
        let net: &ViewNet = if v == 0 { &inst.model.range } else { &inst.model.voxel };
        let pre = affine(&inst.inputs[v], &net.trunk.weight, &net.trunk.bias);
        if min_abs(&pre) < KINK_MARGIN {
            return false;
        }
        let h = leaky(&pre);
        let mut p = h.clone();
        for layer in &net.proj[..2] {
            let pre = affine(&p, &layer.weight, &layer.bias);
            if min_abs(&pre) < KINK_MARGIN {
                return false;
            }
            p = leaky(&pre);
        }
        let logits = affine(&h, &net.seg.weight, &net.seg.bias);
        let k = inst.labelled;
        let t = &inst.targets[v];
        let parts: Vec<(Tensor, &[usize])> = if inst.kind == LossKind::Combined {
            vec![
                (logits.slice(ndarray::s![..k, ..]).to_owned(), &t[..k]),
                (logits.slice(ndarray::s![k.., ..]).to_owned(), &t[k..]),
            ]
        } else {
            vec![(logits, &t[..])]
        };
        for (l, t) in parts {
            if lovasz_gap(&l, t) < KINK_MARGIN {
                return false;
            }
        }
    }
    true
}

/// Random instance away from kinks; redraws until one is found.
pub fn random_instance(kind: LossKind, rng: &mut ChaCha8Rng) -> Instance {
    loop {
        let classes = rng.random_range(2..=4);
        let dims = ModelDims {
            num_classes: classes,
            range_in: rng.random_range(2..=4),
            voxel_in: rng.random_range(2..=4),
            range_hidden: rng.random_range(3..=6),
            voxel_hidden: rng.random_range(3..=6),
            embed_dim: rng.random_range(2..=4),
        };
        let mut model = ModelState::new(dims, rng.random()).unwrap();
        for p in model.params_mut() {
            if p.nrows() == 1 {
                p.mapv_inplace(|_| 0.3 * rng.sample::<f64, _>(StandardNormal));
            }
        }
        let rows = rng.random_range(4..=10);
        let labelled = rng.random_range(1..rows);
        let inputs = [gaussian(rng, rows, dims.range_in), gaussian(rng, rows, dims.voxel_in)];
        let targets = [
            (0..rows).map(|_| rng.random_range(0..classes)).collect(),
            (0..rows).map(|_| rng.random_range(0..classes)).collect(),
        ];
        let protos = PrototypeSet {
            per_class: (0..classes)
                .map(|_| (0..rng.random_range(1..=3)).map(|_| unit_vector(rng, dims.embed_dim)).collect())
                .collect(),
        };
        let tau = rng.random_range(0.1..1.0);
        let inst = Instance {
            kind,
            model,
            inputs,
            targets,
            labelled,
            protos,
            tau,
        };
        if smooth_enough(&inst) {
            return inst;
        }
    }
}

fn all_anchors(labels: &[usize]) -> AnchorSet {
    AnchorSet {
        rows: (0..labels.len()).collect(),
        labels: labels.to_vec(),
        easy: labels.len(),
        hard: 0,
    }
}

/// Records the instance's loss on a fresh tape. Returns the tape, the loss
/// and the parameter leaves (range view first).
pub fn record(inst: &Instance, model: &ModelState) -> (Tape, Var, Vec<Var>) {
    let mut tape = Tape::new();
    let nets = [&model.range, &model.voxel];
    let bound: Vec<_> = nets.iter().map(|n| n.bind(&mut tape)).collect();
    let params: Vec<Var> = bound.iter().flat_map(|b| b.vars.clone()).collect();
    let x: Vec<Var> = inst.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let fwd: Vec<_> = (0..2).map(|v| nets[v].forward_tape(&mut tape, &bound[v], x[v])).collect();
    let t = &inst.targets;
    let loss = match inst.kind {
        LossKind::CrossEntropy => cross_entropy_loss(&mut tape, fwd[0].logits, &t[0]).unwrap().value,
        LossKind::Lovasz => {
            let p = tape.softmax_rows(fwd[0].logits);
            lovasz_softmax_loss(&mut tape, p, &t[0]).unwrap().value
        }
        LossKind::InfoNce => {
            let e = nets[0].embed_tape(&mut tape, &bound[0], fwd[0].hidden);
            contrastive_loss(&mut tape, e, &all_anchors(&t[0]), &inst.protos, inst.tau)
                .unwrap()
                .expect("every class has prototypes")
                .0
        }
        LossKind::Combined => {
            let k = inst.labelled;
            let n = t[0].len();
            let mut sup = Vec::new();
            for v in 0..2 {
                let lab = tape.gather_rows(fwd[v].logits, (0..k).collect());
                let pse = tape.gather_rows(fwd[v].logits, (k..n).collect());
                sup.push(ViewSupervision {
                    labelled: Some(SupervisionBatch {
                        logits: lab,
                        targets: t[v][..k].to_vec(),
                        kind: TargetKind::GroundTruth,
                        confidence: None,
                    }),
                    pseudo: Some(SupervisionBatch {
                        logits: pse,
                        targets: t[v][k..].to_vec(),
                        kind: TargetKind::Pseudo,
                        confidence: None,
                    }),
                });
            }
            let mut total = it2_loss(&mut tape, &sup[0], &sup[1], LossWeights::default()).unwrap().total;
            for v in 0..2 {
                let e = nets[v].embed_tape(&mut tape, &bound[v], fwd[v].hidden);
                let (c, _) = contrastive_loss(&mut tape, e, &all_anchors(&t[v]), &inst.protos, inst.tau)
                    .unwrap()
                    .unwrap();
                total = tape.add(total, c);
            }
            total
        }
    };
    (tape, loss, params)
}

pub fn loss_value(inst: &Instance, model: &ModelState) -> f64 {
    let (tape, loss, _) = record(inst, model);
    tape.scalar(loss)
}

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors. A central difference at step
/// 1e-5 carries roundoff near 1e-10 on losses of order 1 to 10, so smaller
/// gradients cannot be resolved to 1e-4 relative.
pub const REL_FLOOR: f64 = 1e-5;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter of the model.
pub fn max_gradient_error(inst: &Instance) -> f64 {
    let (tape, loss, params) = record(inst, &inst.model);
    let grads = tape.backward(loss).unwrap();
    let shapes: Vec<(usize, usize)> = inst.model.params().iter().map(|p| p.dim()).collect();
    let analytic: Vec<Tensor> = params.iter().zip(&shapes).map(|(&v, &s)| grads.wrt(v, s)).collect();
    let mut worst: f64 = 0.0;
    for (k, (rows, cols)) in shapes.iter().copied().enumerate() {
        for i in 0..rows {
            for j in 0..cols {
                let mut plus = inst.model.clone();
                plus.params_mut()[k][[i, j]] += FD_STEP;
                let mut minus = inst.model.clone();
                minus.params_mut()[k][[i, j]] -= FD_STEP;
                let numeric = (loss_value(inst, &plus) - loss_value(inst, &minus)) / (2.0 * FD_STEP);
                worst = worst.max(rel_error(analytic[k][[i, j]], numeric));
            }
        }
    }
    worst
}

/// Random points whose pixels and voxels are all distinct. Candidates that
/// share a pixel or a voxel with any other candidate are dropped.
pub fn collision_free_scan(rng: &mut ChaCha8Rng, sensor: &SensorSpec, candidates: usize, classes: usize) -> PointScan {
    let positions: Vec<[f32; 3]> = (0..candidates)
        .map(|_| {
            let r = rng.random_range(1.0..sensor.radial_max * 0.95);
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let z = rng.random_range(sensor.z_min * 0.95..sensor.z_max * 0.95);
            [(r * yaw.cos()) as f32, (r * yaw.sin()) as f32, z as f32]
        })
        .collect();
    let n = positions.len();
    let probe = PointScan::new(positions.clone(), vec![0.0; n], 1, vec![0; n], classes).unwrap();
    let img = project_to_range(&probe, sensor).unwrap();
    let vox = project_to_voxel(&probe, sensor).unwrap();
    let mut pix_count = vec![0usize; img.valid.len()];
    let mut vox_count = vec![0usize; vox.occupied.len()];
    for i in 0..n {
        pix_count[img.pixel_of_point[i]] += 1;
        vox_count[vox.voxel_of_point[i]] += 1;
    }
    let keep: Vec<usize> = (0..n)
        .filter(|&i| pix_count[img.pixel_of_point[i]] == 1 && vox_count[vox.voxel_of_point[i]] == 1)
        .collect();
    let m = keep.len().max(1);
    let keep = if keep.is_empty() { vec![0] } else { keep };
    let features: Vec<f32> = (0..m).map(|_| rng.random()).collect();
    let labels: Vec<u16> = (0..m).map(|_| rng.random_range(0..classes as u16)).collect();
    PointScan::new(keep.iter().map(|&i| positions[i]).collect(), features, 1, labels, classes).unwrap()
}
