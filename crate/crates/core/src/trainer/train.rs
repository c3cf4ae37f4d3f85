//! The joint training loop over both views.

use ndarray::{concatenate, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{Dataset, PreparedScan};
use super::metrics::{evaluate, EvalReport};
use crate::augment::{cutmix_range, lasermix_voxel, LabelledCloud, MixPlan, MixedRange, MixedVoxel};
use crate::consistency::{it2_loss_ramped, make_pseudo_labels, segmentation_loss, PseudoLabels, SupervisionBatch, TargetKind, ViewSupervision};
use crate::error::{Error, Result};
use crate::netcore::{forward_segment, poly_lr, softmax, softmax_rows, ModelState, Optimizer, Tape, Tensor, Var};
use crate::projection::{CellGrid, Domain, HardGrid, SoftGrid};
use crate::prototypes::{
    collect_embeddings, contrastive_loss, mine_anchors, sample_prototype_set, GmmBank, ViewEmbeddings,
};

/// Mean losses and held-out IoU after one epoch. Keys are fixed; `null`
/// marks an undefined IoU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub iterations: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_range_labelled: f64,
    pub loss_range_pseudo: f64,
    pub loss_voxel_labelled: f64,
    pub loss_voxel_pseudo: f64,
    pub loss_contrastive: f64,
    pub miou_range: Option<f64>,
    pub miou_voxel: Option<f64>,
    pub miou_fused: Option<f64>,
    pub iou_range: Vec<Option<f64>>,
    pub iou_voxel: Vec<Option<f64>>,
    pub iou_fused: Vec<Option<f64>>,
}

impl EpochRecord {
    /// Sum of the reported components.
    pub fn component_sum(&self) -> f64 {
        self.loss_range_labelled
            + self.loss_range_pseudo
            + self.loss_voxel_labelled
            + self.loss_voxel_pseudo
            + self.loss_contrastive
    }
}

/// Losses of one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub total: f64,
    pub range_labelled: f64,
    pub range_pseudo: f64,
    pub voxel_labelled: f64,
    pub voxel_pseudo: f64,
    pub contrastive: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub lr: f64,
    pub losses: StepLosses,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub bank: GmmBank,
    pub records: Vec<EpochRecord>,
}

/// Seeded streams kept apart so toggling a component never reorders batches.
struct Streams {
    order: ChaCha8Rng,
    aux: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Streams {
        Streams {
            order: ChaCha8Rng::seed_from_u64(seed ^ 0x6f_7264_6572),
            aux: ChaCha8Rng::seed_from_u64(seed ^ 0x0061_7578),
        }
    }
}

/// Cycles through a shuffled index list, reshuffling on wrap-around.
struct Cycler {
    n: usize,
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize) -> Cycler {
        Cycler {
            n,
            order: Vec::new(),
            pos: 0,
        }
    }

    fn next_batch(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k.min(self.n) {
            if self.pos == self.order.len() {
                self.order = (0..self.n).collect();
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn soft_predictions(state: &ModelState, grid: &dyn CellGrid) -> Result<SoftGrid> {
    let logits = forward_segment(state, grid)?;
    let probs = softmax(&logits.logits)?;
    let rows: Vec<f64> = probs.iter().copied().collect();
    SoftGrid::from_rows(logits.domain, state.dims.num_classes, logits.num_cells, &logits.cells, &rows)
}

/// Pseudo-labelled inputs of one unlabelled scan, possibly mixed.
enum RangeInput<'a> {
    Plain(&'a PreparedScan, HardGrid),
    Mixed(MixedRange),
}

enum VoxelInput<'a> {
    Plain(&'a PreparedScan, HardGrid),
    Mixed(MixedVoxel),
}

impl RangeInput<'_> {
    fn parts(&self) -> (&dyn CellGrid, &HardGrid) {
        match self {
            RangeInput::Plain(s, l) => (&s.range, l),
            RangeInput::Mixed(m) => (m, &m.labels),
        }
    }
}

impl VoxelInput<'_> {
    fn parts(&self) -> (&dyn CellGrid, &HardGrid) {
        match self {
            VoxelInput::Plain(s, l) => (&s.voxel, l),
            VoxelInput::Mixed(m) => (&m.grid, &m.labels),
        }
    }
}

/// Stacked input rows of one view: labelled rows first, then pseudo rows.
struct ViewRows {
    x: Tensor,
    n_lab: usize,
    targets: Vec<usize>,
    confidence: Vec<f64>,
}

fn stack_rows(state: &ModelState, domain: Domain, parts: &[(&dyn CellGrid, &HardGrid)], n_lab_parts: usize) -> Result<ViewRows> {
    let net = state.view(domain);
    let mut xs = Vec::with_capacity(parts.len());
    let mut targets = Vec::new();
    let mut confidence = Vec::new();
    let mut n_lab = 0;
    for (k, (grid, labels)) in parts.iter().enumerate() {
        let cells: Vec<usize> = (0..grid.num_cells())
            .filter(|&c| labels.valid[c] && grid.is_valid(c))
            .collect();
        if k < n_lab_parts {
            n_lab += cells.len();
        }
        targets.extend(cells.iter().map(|&c| labels.labels[c] as usize));
        confidence.extend(cells.iter().map(|&c| labels.confidence[c]));
        xs.push(net.inputs(*grid, &cells)?);
    }
    let x = if xs.is_empty() {
        Tensor::zeros((0, net.input_width()))
    } else {
        let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
        concatenate(Axis(0), &views).expect("same width")
    };
    Ok(ViewRows {
        x,
        n_lab,
        targets,
        confidence,
    })
}

fn row_argmax(t: &Tensor) -> (Vec<usize>, Vec<f64>) {
    let p = softmax_rows(t);
    p.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for k in 1..r.len() {
                if r[k] > r[best] {
                    best = k;
                }
            }
            (best, r[best])
        })
        .unzip()
}

/// Everything recorded on the tape for one iteration.
struct StepGraph {
    tape: Tape,
    total: Var,
    labelled: Option<Var>,
    params: Vec<Var>,
    losses: StepLosses,
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    data: &'a Dataset,
}

impl<'a> Trainer<'a> {
    fn pseudo_inputs(
        &self,
        state: &ModelState,
        unl: &[usize],
    ) -> Result<(Vec<RangeInput<'a>>, Vec<VoxelInput<'a>>)> {
        let data = self.data;
        let scans: Vec<&'a PreparedScan> = unl.iter().map(|&i| &data.unlabelled[i]).collect();
        let mut pseudo: Vec<PseudoLabels> = Vec::with_capacity(scans.len());
        for s in &scans {
            let r = soft_predictions(state, &s.range)?;
            let v = soft_predictions(state, &s.voxel)?;
            pseudo.push(make_pseudo_labels(&r, &v, &s.range, &s.voxel)?);
        }
        if !self.cfg.augment || scans.is_empty() {
            let mut ranges = Vec::new();
            let mut voxels = Vec::new();
            for (s, p) in scans.iter().zip(pseudo) {
                ranges.push(RangeInput::Plain(s, p.range));
                voxels.push(VoxelInput::Plain(s, p.voxel));
            }
            return Ok((ranges, voxels));
        }
        let plan = MixPlan::new(scans.len(), &data.sensor)?;
        let images: Vec<_> = scans.iter().map(|s| &s.range).collect();
        let labels: Vec<_> = pseudo.iter().map(|p| &p.range).collect();
        let ranges = cutmix_range(&images, &labels, &plan)?
            .into_iter()
            .map(RangeInput::Mixed)
            .collect();
        let clouds: Vec<LabelledCloud> = scans
            .iter()
            .zip(&pseudo)
            .map(|(s, p)| {
                let mut scan = s.scan.clone();
                scan.labels = s.voxel.voxel_of_point.iter().map(|&c| p.voxel.labels[c]).collect();
                let confidence = s.voxel.voxel_of_point.iter().map(|&c| p.voxel.confidence[c]).collect();
                LabelledCloud {
                    scan,
                    confidence,
                    sensor: data.sensor.clone(),
                }
            })
            .collect();
        let voxels = (0..clouds.len())
            .map(|i| lasermix_voxel(&clouds[i], &clouds[plan.partner[i]], &plan).map(VoxelInput::Mixed))
            .collect::<Result<Vec<_>>>()?;
        Ok((ranges, voxels))
    }

    #[allow(clippy::too_many_arguments)]
    fn build_step(
        &self,
        state: &ModelState,
        bank: &mut GmmBank,
        lab: &[usize],
        unl: &[usize],
        epoch: usize,
        pseudo_weight: f64,
        rng: &mut ChaCha8Rng,
        want_labelled: bool,
    ) -> Result<StepGraph> {
        let cfg = self.cfg;
        let data = self.data;
        let (ranges, voxels) = self.pseudo_inputs(state, unl)?;

        let mut range_parts: Vec<(&dyn CellGrid, &HardGrid)> =
            lab.iter().map(|&i| (&data.labelled[i].range as &dyn CellGrid, &data.labelled[i].range_labels)).collect();
        range_parts.extend(ranges.iter().map(|r| r.parts()));
        let mut voxel_parts: Vec<(&dyn CellGrid, &HardGrid)> =
            lab.iter().map(|&i| (&data.labelled[i].voxel as &dyn CellGrid, &data.labelled[i].voxel_labels)).collect();
        voxel_parts.extend(voxels.iter().map(|v| v.parts()));
        let rows = [
            stack_rows(state, Domain::Range, &range_parts, lab.len())?,
            stack_rows(state, Domain::Voxel, &voxel_parts, lab.len())?,
        ];

        let mut tape = Tape::new();
        let mut params = Vec::new();
        let mut sup: Vec<ViewSupervision> = Vec::new();
        let mut embeds: Vec<Option<Var>> = Vec::new();
        let mut logit_vars = Vec::new();
        for (domain, r) in [Domain::Range, Domain::Voxel].into_iter().zip(&rows) {
            let net = state.view(domain);
            let bound = net.bind(&mut tape);
            params.extend(bound.vars.iter().copied());
            let x = tape.leaf(r.x.clone());
            let fwd = net.forward_tape(&mut tape, &bound, x);
            logit_vars.push(fwd.logits);
            let n = r.targets.len();
            let mut vs = ViewSupervision::default();
            if r.n_lab > 0 {
                vs.labelled = Some(SupervisionBatch {
                    logits: tape.gather_rows(fwd.logits, (0..r.n_lab).collect()),
                    targets: r.targets[..r.n_lab].to_vec(),
                    kind: TargetKind::GroundTruth,
                    confidence: None,
                });
            }
            if n > r.n_lab {
                vs.pseudo = Some(SupervisionBatch {
                    logits: tape.gather_rows(fwd.logits, (r.n_lab..n).collect()),
                    targets: r.targets[r.n_lab..].to_vec(),
                    kind: TargetKind::Pseudo,
                    confidence: Some(r.confidence[r.n_lab..].to_vec()),
                });
            }
            sup.push(vs);
            embeds.push(cfg.contrastive.then(|| net.embed_tape(&mut tape, &bound, fwd.hidden)));
        }

        let it2 = it2_loss_ramped(&mut tape, &sup[0], &sup[1], cfg.loss_weights, pseudo_weight)?;
        let mut total = it2.total;
        let mut losses = StepLosses {
            range_labelled: it2.range_labelled,
            range_pseudo: it2.range_pseudo,
            voxel_labelled: it2.voxel_labelled,
            voxel_pseudo: it2.voxel_pseudo,
            ..StepLosses::default()
        };

        if cfg.contrastive {
            let protos = sample_prototype_set(bank, cfg.prototypes_per_class, cfg.sampling, rng)?;
            let mut terms: Vec<(Var, usize)> = Vec::new();
            if protos.total() > 0 {
                for (k, r) in rows.iter().enumerate() {
                    let (pred, _) = row_argmax(tape.value(logit_vars[k]));
                    let targets: Vec<Option<usize>> = r.targets.iter().map(|&t| Some(t)).collect();
                    let anchors = mine_anchors(&pred, &targets, cfg.anchor_cap, rng)?;
                    let emb = embeds[k].expect("embeddings recorded");
                    if let Some(t) = contrastive_loss(&mut tape, emb, &anchors, &protos, cfg.tau)? {
                        terms.push(t);
                    }
                }
            }
            let pairs: usize = terms.iter().map(|t| t.1).sum();
            if pairs > 0 {
                let mut ctr: Option<Var> = None;
                for (v, p) in terms {
                    let w = cfg.contrastive_weight * p as f64 / pairs as f64;
                    let s = tape.scale(v, w);
                    ctr = Some(match ctr {
                        Some(c) => tape.add(c, s),
                        None => s,
                    });
                }
                let ctr = ctr.expect("at least one term");
                losses.contrastive = tape.scalar(ctr);
                total = tape.add(total, ctr);
            }

            if epoch >= cfg.warmup_epochs {
                let mut owned: Vec<(Domain, Tensor, Vec<usize>, Vec<f64>)> = Vec::new();
                for (k, (domain, r)) in [Domain::Range, Domain::Voxel].into_iter().zip(&rows).enumerate() {
                    let emb = tape.value(embeds[k].expect("embeddings recorded"));
                    let (pred, conf) = row_argmax(tape.value(logit_vars[k]));
                    let start = if cfg.include_labelled_embeddings { 0 } else { r.n_lab };
                    let idx: Vec<usize> = (start..r.targets.len()).collect();
                    let labels = idx
                        .iter()
                        .map(|&i| if i < r.n_lab { r.targets[i] } else { pred[i] })
                        .collect();
                    let c = idx.iter().map(|&i| if i < r.n_lab { 1.0 } else { conf[i] }).collect();
                    owned.push((domain, emb.select(Axis(0), &idx), labels, c));
                }
                let views: Vec<ViewEmbeddings<'_>> = owned
                    .iter()
                    .map(|(d, e, l, c)| ViewEmbeddings {
                        domain: *d,
                        embeddings: e,
                        labels: l,
                        confidence: c,
                    })
                    .collect();
                let sets = collect_embeddings(&views, data.num_classes, cfg.gmm_cap, rng)?;
                bank.em_update(&sets, cfg.em_iters, cfg.em_mode, rng)?;
                bank.ema_update(cfg.ema_alpha);
            }
        }
        losses.total = tape.scalar(total);

        let labelled = if want_labelled {
            let mut acc: Option<Var> = None;
            for vs in &sup {
                if let Some(b) = &vs.labelled {
                    if let Some(v) = segmentation_loss(&mut tape, b, cfg.loss_weights)? {
                        acc = Some(match acc {
                            Some(a) => tape.add(a, v),
                            None => v,
                        });
                    }
                }
            }
            acc
        } else {
            None
        };
        Ok(StepGraph {
            tape,
            total,
            labelled,
            params,
            losses,
        })
    }

    fn iterations_per_epoch(&self) -> usize {
        let d = self.data;
        if d.unlabelled.is_empty() {
            d.labelled.len().div_ceil(self.cfg.labelled_batch_size)
        } else {
            d.unlabelled.len().div_ceil(self.cfg.batch_size)
        }
    }
}

fn check_dataset(cfg: &TrainConfig, data: &Dataset) -> Result<()> {
    cfg.validate()?;
    if data.labelled.is_empty() {
        return Err(Error::Argument("training needs at least one labelled scan".into()));
    }
    if !data.unlabelled.is_empty() && cfg.unlabelled && cfg.augment && data.sensor.image_width < cfg.batch_size {
        return Err(Error::Config(format!(
            "image width {} is smaller than the batch size {}",
            data.sensor.image_width, cfg.batch_size
        )));
    }
    Ok(())
}

/// Initial weights for `seed`.
pub fn initial_model(cfg: &TrainConfig, data: &Dataset, seed: u64) -> Result<ModelState> {
    ModelState::for_sensor(
        &data.sensor,
        data.num_features,
        data.num_classes,
        (cfg.range_hidden, cfg.voxel_hidden),
        cfg.embed_dim,
        seed,
    )
}

pub fn initial_bank(cfg: &TrainConfig, data: &Dataset) -> Result<GmmBank> {
    GmmBank::new(data.num_classes, cfg.components, cfg.embed_dim, cfg.gmm_eps, cfg.covariance)
}

pub fn train(cfg: &TrainConfig, data: &Dataset, seed: u64) -> Result<TrainOutcome> {
    train_observed(cfg, data, seed, &mut |_| {})
}

/// [`train`] reporting every iteration to `observe`.
pub fn train_observed(
    cfg: &TrainConfig,
    data: &Dataset,
    seed: u64,
    observe: &mut dyn FnMut(&IterationRecord),
) -> Result<TrainOutcome> {
    check_dataset(cfg, data)?;
    let trainer = Trainer { cfg, data };
    let mut model = initial_model(cfg, data, seed)?;
    let mut bank = initial_bank(cfg, data)?;
    let mut optim = Optimizer::new(cfg.optimizer, &model);
    let mut streams = Streams::new(seed);
    let mut lab_cycle = Cycler::new(data.labelled.len());
    let mut unl_cycle = Cycler::new(data.unlabelled.len());
    let per_epoch = trainer.iterations_per_epoch();
    let max_iter = cfg.epochs * per_epoch;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut iteration = 0;
    for epoch in 0..cfg.epochs {
        let mut sums = StepLosses::default();
        let mut lr = cfg.base_lr;
        for _ in 0..per_epoch {
            let lab = lab_cycle.next_batch(cfg.labelled_batch_size, &mut streams.order);
            let unl = if cfg.unlabelled {
                unl_cycle.next_batch(cfg.batch_size, &mut streams.order)
            } else {
                Vec::new()
            };
            let ramp = cfg.pseudo_ramp_epochs * per_epoch;
            let pseudo_weight = if ramp == 0 { 1.0 } else { ((iteration + 1) as f64 / ramp as f64).min(1.0) };
            let graph =
                trainer.build_step(&model, &mut bank, &lab, &unl, epoch, pseudo_weight, &mut streams.aux, false)?;
            let l = graph.losses;
            if !l.total.is_finite() {
                return Err(Error::Divergence {
                    iteration,
                    reason: format!("loss is {}", l.total),
                });
            }
            let grads = graph.tape.backward(graph.total)?;
            let shapes: Vec<(usize, usize)> = model.params().iter().map(|p| p.dim()).collect();
            let g: Vec<Tensor> = graph.params.iter().zip(shapes).map(|(&v, s)| grads.wrt(v, s)).collect();
            lr = poly_lr(cfg.base_lr, iteration, max_iter);
            optim.step(&mut model, &g, lr)?;
            if !model.is_finite() {
                return Err(Error::Divergence {
                    iteration,
                    reason: "non-finite weights after the update".into(),
                });
            }
            observe(&IterationRecord {
                iteration,
                epoch,
                lr,
                losses: l,
            });
            sums.total += l.total;
            sums.range_labelled += l.range_labelled;
            sums.range_pseudo += l.range_pseudo;
            sums.voxel_labelled += l.voxel_labelled;
            sums.voxel_pseudo += l.voxel_pseudo;
            sums.contrastive += l.contrastive;
            iteration += 1;
        }
        let n = per_epoch.max(1) as f64;
        let report = evaluate(&model, &data.heldout, cfg.protocol)?;
        records.push(epoch_record(epoch, per_epoch, lr, &sums, n, &report));
    }
    Ok(TrainOutcome { model, bank, records })
}

fn epoch_record(epoch: usize, iterations: usize, lr: f64, s: &StepLosses, n: f64, r: &EvalReport) -> EpochRecord {
    let mut rec = EpochRecord {
        epoch,
        iterations,
        lr,
        loss_total: 0.0,
        loss_range_labelled: s.range_labelled / n,
        loss_range_pseudo: s.range_pseudo / n,
        loss_voxel_labelled: s.voxel_labelled / n,
        loss_voxel_pseudo: s.voxel_pseudo / n,
        loss_contrastive: s.contrastive / n,
        miou_range: r.range.miou,
        miou_voxel: r.voxel.miou,
        miou_fused: r.fused.miou,
        iou_range: r.range.per_class.clone(),
        iou_voxel: r.voxel.per_class.clone(),
        iou_fused: r.fused.per_class.clone(),
    };
    // The mean of per-iteration totals differs from the sum of component
    // means only by rounding; report the latter so the record adds up.
    debug_assert!((s.total / n - rec.component_sum()).abs() < 1e-9 * (1.0 + s.total.abs()));
    rec.loss_total = rec.component_sum();
    rec
}

/// Gradients of the labelled terms alone on the first iteration, with all
/// other components active as configured.
pub fn first_labelled_gradients(cfg: &TrainConfig, data: &Dataset, seed: u64) -> Result<Vec<Tensor>> {
    check_dataset(cfg, data)?;
    let trainer = Trainer { cfg, data };
    let model = initial_model(cfg, data, seed)?;
    let mut bank = initial_bank(cfg, data)?;
    let mut streams = Streams::new(seed);
    let lab = Cycler::new(data.labelled.len()).next_batch(cfg.labelled_batch_size, &mut streams.order);
    let unl = if cfg.unlabelled {
        Cycler::new(data.unlabelled.len()).next_batch(cfg.batch_size, &mut streams.order)
    } else {
        Vec::new()
    };
    let graph = trainer.build_step(&model, &mut bank, &lab, &unl, 0, 1.0, &mut streams.aux, true)?;
    let loss = graph
        .labelled
        .ok_or_else(|| Error::State("no labelled cells in the first batch".into()))?;
    let grads = graph.tape.backward(loss)?;
    Ok(graph
        .params
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.wrt(v, p.dim()))
        .collect())
}

/// Line-delimited JSON, one record per epoch.
pub fn metrics_jsonl(records: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<Vec<EpochRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Config(format!("bad metrics line: {e}"))))
        .collect()
}
