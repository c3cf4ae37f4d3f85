//! Training loop, metrics, fusion and ablation behaviour.

use it2::netcore::OptimizerKind;
use it2::projection::SensorSpec;
use it2::scanio::{SceneConfig, SplitStrategy};
use it2::trainer::{
    ablate, ablation_csv, first_labelled_gradients, fuse_predictions, initial_model, iou_report, metrics_jsonl,
    parse_metrics, synthetic_dataset, train, train_observed, ConfusionMatrix, Dataset, Protocol, TrainConfig,
    Variant, ABLATION_HEADER,
};
use it2::Error;

fn toy_scene() -> SceneConfig {
    SceneConfig {
        points_per_scan: 48,
        num_features: 4,
        signature_spread: 0.2,
        ..SceneConfig::default()
    }
}

fn toy_data(total: usize) -> Dataset {
    synthetic_dataset(&toy_scene(), &SensorSpec::default(), total, 0.1, SplitStrategy::Uniform, 0).unwrap()
}

fn toy_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        optimizer: OptimizerKind::Adamw,
        base_lr: 0.01,
        warmup_epochs: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn supervised_loss_decreases_on_toy() {
    let data = toy_data(30);
    let cfg = Variant::Supervised.apply(&toy_train(25));
    let mut losses = Vec::new();
    train_observed(&cfg, &data, 0, &mut |it| losses.push(it.losses.total)).unwrap();
    assert!(losses.len() >= 50, "only {} iterations", losses.len());
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[40..50].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "smoothed loss went from {head} to {tail}");
}

#[test]
fn zero_epochs_returns_initial_state() {
    let data = toy_data(20);
    let cfg = toy_train(0);
    let out = train(&cfg, &data, 3).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.model, initial_model(&cfg, &data, 3).unwrap());
}

#[test]
fn runs_are_deterministic_per_seed() {
    let data = toy_data(30);
    let cfg = Variant::Full.apply(&toy_train(2));
    let a = metrics_jsonl(&train(&cfg, &data, 7).unwrap().records);
    let b = metrics_jsonl(&train(&cfg, &data, 7).unwrap().records);
    let c = metrics_jsonl(&train(&cfg, &data, 8).unwrap().records);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn reported_losses_add_up() {
    let data = toy_data(30);
    for variant in Variant::ALL {
        let cfg = variant.apply(&toy_train(3));
        let mut steps = Vec::new();
        let out = train_observed(&cfg, &data, 1, &mut |it| steps.push(it.losses)).unwrap();
        for l in &steps {
            let sum = l.range_labelled + l.range_pseudo + l.voxel_labelled + l.voxel_pseudo + l.contrastive;
            assert!((l.total - sum).abs() <= 1e-9, "{}: {} vs {sum}", variant.name(), l.total);
        }
        for r in &out.records {
            assert!((r.loss_total - r.component_sum()).abs() <= 1e-9);
            if variant == Variant::Supervised {
                assert_eq!(r.loss_range_pseudo, 0.0);
                assert_eq!(r.loss_voxel_pseudo, 0.0);
            }
            if matches!(variant, Variant::Supervised | Variant::It2) {
                assert_eq!(r.loss_contrastive, 0.0);
            }
        }
    }
}

#[test]
fn contrastive_term_appears_after_warmup() {
    let data = toy_data(30);
    let cfg = Variant::It2Contrastive.apply(&toy_train(3));
    let out = train(&cfg, &data, 0).unwrap();
    assert_eq!(out.records[0].loss_contrastive, 0.0);
    assert!(out.records[2].loss_contrastive > 0.0);
}

#[test]
fn components_do_not_touch_labelled_gradients() {
    let data = toy_data(30);
    let base = toy_train(1);
    let reference = first_labelled_gradients(&Variant::Supervised.apply(&base), &data, 2).unwrap();
    for variant in [Variant::It2, Variant::It2Contrastive, Variant::Full] {
        let g = first_labelled_gradients(&variant.apply(&base), &data, 2).unwrap();
        assert_eq!(g.len(), reference.len());
        for (a, b) in g.iter().zip(&reference) {
            let scale = b.iter().fold(1e-12_f64, |m, x| m.max(x.abs()));
            let diff = a.iter().zip(b.iter()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(diff <= 1e-12 * scale, "{}: diff {diff}", variant.name());
        }
    }
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let data = toy_data(20);
    let cfg = TrainConfig {
        optimizer: OptimizerKind::Sgd,
        base_lr: 1e12,
        ..Variant::Supervised.apply(&toy_train(5))
    };
    match train(&cfg, &data, 0) {
        Err(Error::Divergence { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|o| o.records.len())),
    }
}

#[test]
fn metrics_round_trip() {
    let data = toy_data(20);
    let out = train(&toy_train(2), &data, 0).unwrap();
    let text = metrics_jsonl(&out.records);
    assert_eq!(text.lines().count(), 2);
    assert_eq!(parse_metrics(&text).unwrap(), out.records);
}

#[test]
fn fusion_averages_views() {
    let (probs, labels) = fuse_predictions(&[0.9, 0.1], &[0.2, 0.8], 2).unwrap();
    assert!((probs[0] - 0.55).abs() < 1e-12);
    assert!((probs[1] - 0.45).abs() < 1e-12);
    assert_eq!(labels, vec![0]);
}

#[test]
fn confusion_counts_every_point() {
    let truth = [0u16, 1, 2, 2, 3, 1, 0];
    let pred = [0u16, 2, 2, 1, 3, 1, 1];
    let mut cm = ConfusionMatrix::new(4);
    cm.accumulate(&truth, &pred).unwrap();
    assert_eq!(cm.total(), truth.len() as u64);
    assert_eq!(cm.get(2, 1), 1);
}

#[test]
fn perfect_predictions_score_one() {
    let truth: Vec<u16> = vec![0, 1, 2, 3, 3, 2];
    for protocol in [Protocol::Global, Protocol::Batchwise] {
        let r = iou_report(&[&truth], &[&truth], 4, protocol).unwrap();
        assert_eq!(r.miou, Some(1.0));
    }
}

#[test]
fn absent_class_is_undefined() {
    let truth: Vec<u16> = vec![0, 0, 1];
    let r = iou_report(&[&truth], &[&truth], 3, Protocol::Global).unwrap();
    assert_eq!(r.per_class[2], None);
    assert_eq!(r.miou, Some(1.0));
}

#[test]
fn ablation_is_reproducible_and_thread_independent() {
    let data = toy_data(24);
    let cfg = toy_train(1);
    let variants = [Variant::Supervised, Variant::It2];
    let seq = ablate(&cfg, &variants, &data, &[0, 1], 1).unwrap();
    let again = ablate(&cfg, &variants, &data, &[0, 1], 1).unwrap();
    let par = ablate(&cfg, &variants, &data, &[0, 1], 3).unwrap();
    assert_eq!(seq, again);
    assert_eq!(seq, par);
    assert_eq!(seq.len(), 2 * 2 * 3);
}

#[test]
fn single_config_grid_gives_one_row_per_view() {
    let data = toy_data(24);
    let rows = ablate(&toy_train(1), &[Variant::Supervised], &data, &[0], 1).unwrap();
    let views: Vec<&str> = rows.iter().map(|r| r.view.as_str()).collect();
    assert_eq!(views, ["range", "voxel", "fused"]);
    let csv = ablation_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(ABLATION_HEADER));
    assert_eq!(lines.next().unwrap().split(',').take(3).collect::<Vec<_>>(), ["supervised", "0", "range"]);
    assert_eq!(lines.count(), 2);
}

#[test]
fn training_without_labels_is_rejected() {
    let scene = toy_scene();
    let data = Dataset::new(
        SensorSpec::default(),
        Vec::new(),
        it2::trainer::generate_scans(&scene, 3).unwrap().into_iter().map(|s| s.stripped()).collect(),
        Vec::new(),
    );
    if let Ok(data) = data {
        assert!(train(&toy_train(1), &data, 0).is_err());
    }
}
