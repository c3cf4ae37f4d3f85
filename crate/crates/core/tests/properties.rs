//! Randomized invariants.

use it2::augment::{column_intervals, lasermix_points, LabelledCloud};
use it2::netcore::{decode_checkpoint, encode_checkpoint, softmax_rows, Checkpoint, ModelState, Tape, Tensor};
use it2::projection::{project_to_range, project_to_voxel, Domain, SensorSpec};
use it2::prototypes::{contrastive_loss, AnchorSet, CovarianceKind, EmMode, EmbeddingSample, GmmBank, PrototypeSet};
use it2::scanio::{decode_scan, encode_scan, split_indices, PointScan, SplitStrategy, UNLABELLED};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scan(rng: &mut ChaCha8Rng, n: usize, features: usize, classes: usize, labelled: bool) -> PointScan {
    let positions = (0..n)
        .map(|_| {
            let r: f64 = rng.random_range(1.0..40.0);
            let yaw: f64 = rng.random_range(-3.1..3.1);
            let pitch: f64 = rng.random_range(-0.4..0.1);
            [
                (r * pitch.cos() * yaw.cos()) as f32,
                (r * pitch.cos() * yaw.sin()) as f32,
                (r * pitch.sin()) as f32,
            ]
        })
        .collect();
    let feats = (0..n * features).map(|_| rng.random()).collect();
    let labels = (0..n)
        .map(|_| if labelled { rng.random_range(0..classes as u16) } else { UNLABELLED })
        .collect();
    PointScan::new(positions, feats, features, labels, classes).unwrap()
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    v.into_iter().map(|x| x / n).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scan_encoding_round_trips(seed in any::<u64>(), n in 0usize..200, c in 0usize..4, y in 1usize..20, lab in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scan = random_scan(&mut rng, n, c, y, lab);
        prop_assert_eq!(decode_scan(&encode_scan(&scan)).unwrap(), scan);
    }

    #[test]
    fn split_indices_are_sorted_distinct_and_sized(n in 1usize..500, f in 0.001f64..=1.0, partial in any::<bool>(), seed in any::<u64>()) {
        let strategy = if partial { SplitStrategy::Partial } else { SplitStrategy::Uniform };
        let idx = split_indices(n, f, strategy, seed).unwrap();
        let expected = ((f * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
        prop_assert_eq!(idx.len(), expected);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&i| i < n));
    }

    #[test]
    fn projections_ignore_point_order(seed in any::<u64>(), n in 1usize..300) {
        let sensor = SensorSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scan = random_scan(&mut rng, n, 2, 4, true);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let shuffled = PointScan::new(
            perm.iter().map(|&i| scan.positions[i]).collect(),
            perm.iter().flat_map(|&i| scan.feature_row(i).to_vec()).collect(),
            2,
            perm.iter().map(|&i| scan.labels[i]).collect(),
            4,
        ).unwrap();

        let (a, b) = (project_to_range(&scan, &sensor).unwrap(), project_to_range(&shuffled, &sensor).unwrap());
        prop_assert_eq!(&a.valid, &b.valid);
        prop_assert_eq!(&a.grid, &b.grid);
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(a.pixel_of_point[i], b.pixel_of_point[k]);
        }
        for (pa, pb) in a.point_index.iter().zip(&b.point_index) {
            prop_assert_eq!(pa.map(|i| i as usize), pb.map(|k| perm[k as usize]));
        }

        let (a, b) = (project_to_voxel(&scan, &sensor).unwrap(), project_to_voxel(&shuffled, &sensor).unwrap());
        prop_assert_eq!(&a.occupied, &b.occupied);
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(a.voxel_of_point[i], b.voxel_of_point[k]);
        }
        for (x, y) in a.grid.iter().zip(&b.grid) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn every_point_has_a_cell(seed in any::<u64>(), n in 1usize..300) {
        let sensor = SensorSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scan = random_scan(&mut rng, n, 1, 3, true);
        let img = project_to_range(&scan, &sensor).unwrap();
        let vox = project_to_voxel(&scan, &sensor).unwrap();
        prop_assert!(img.pixel_of_point.iter().all(|&p| p < img.height * img.width && img.valid[p]));
        prop_assert!(vox.voxel_of_point.iter().all(|&v| vox.occupied[v]));
        prop_assert_eq!(vox.members.iter().map(Vec::len).sum::<usize>(), n);
    }

    #[test]
    fn column_strips_tile_the_width(width in 1usize..2000, batch in 1usize..32) {
        prop_assume!(batch <= width);
        let strips = column_intervals(width, batch).unwrap();
        prop_assert_eq!(strips.len(), batch);
        prop_assert_eq!(strips[0].start, 0);
        prop_assert_eq!(strips[batch - 1].end, width);
        prop_assert!(strips.windows(2).all(|w| w[0].end == w[1].start));
        prop_assert!(strips.iter().all(|s| !s.is_empty()));
    }

    #[test]
    fn lasermix_with_itself_is_identity(seed in any::<u64>(), n in 1usize..200, bands in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = LabelledCloud {
            scan: random_scan(&mut rng, n, 2, 3, true),
            confidence: (0..n).map(|_| rng.random()).collect(),
            sensor: SensorSpec::default(),
        };
        prop_assert_eq!(lasermix_points(&cloud, &cloud, bands).unwrap().cloud, cloud);
    }

    #[test]
    fn softmax_ignores_row_shifts(seed in any::<u64>(), rows in 1usize..8, cols in 1usize..10, shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_shape_fn((rows, cols), |_| rng.random_range(-10.0..10.0));
        let p = softmax_rows(&x);
        let q = softmax_rows(&(&x + shift));
        for (a, b) in p.iter().zip(q.iter()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for row in p.rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn em_keeps_covariances_well_posed(
        seed in any::<u64>(),
        classes in 1usize..4,
        m in 1usize..4,
        dim in 1usize..5,
        literal in any::<bool>(),
        diagonal in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = 1e-4;
        let kind = if diagonal { CovarianceKind::Diagonal } else { CovarianceKind::Full };
        let mut bank = GmmBank::new(classes, m, dim, eps, kind).unwrap();
        let sets: Vec<Vec<EmbeddingSample>> = (0..classes)
            .map(|label| {
                let n = rng.random_range(0..40);
                (0..n)
                    .map(|_| EmbeddingSample {
                        z: unit(&mut rng, dim),
                        confidence: rng.random_range(0.01..=1.0),
                        label,
                        view: Domain::Range,
                    })
                    .collect()
            })
            .collect();
        let mode = if literal { EmMode::Literal } else { EmMode::Standard };
        bank.em_update(&sets, 5, mode, &mut rng).unwrap();
        bank.ema_update(0.9);
        prop_assert!((bank.prior() * m as f64 - 1.0).abs() <= 1e-12);
        for class in &bank.classes {
            for comp in class.live.iter().chain(&class.shadow) {
                let c = &comp.cov;
                prop_assert!((c - c.transpose()).amax() <= 1e-12);
                let min_eig = SymmetricEigen::new(c.clone()).eigenvalues.min();
                prop_assert!(min_eig >= eps / 2.0, "min eigenvalue {}", min_eig);
            }
        }
    }

    #[test]
    fn contrastive_ignores_prototype_order(seed in any::<u64>(), classes in 2usize..5, dim in 2usize..6, count in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let per_class: Vec<Vec<Vec<f64>>> = (0..classes)
            .map(|_| (0..rng.random_range(1..4)).map(|_| unit(&mut rng, dim)).collect())
            .collect();
        let labels: Vec<usize> = (0..count).map(|_| rng.random_range(0..classes)).collect();
        let rows: Vec<Vec<f64>> = (0..count).map(|_| unit(&mut rng, dim)).collect();
        let anchors = AnchorSet { rows: (0..count).collect(), labels, easy: count, hard: 0 };
        let value = |protos: &PrototypeSet| {
            let mut tape = Tape::new();
            let emb = tape.leaf(Tensor::from_shape_fn((count, dim), |(i, d)| rows[i][d]));
            let (v, _) = contrastive_loss(&mut tape, emb, &anchors, protos, 0.2).unwrap().unwrap();
            tape.scalar(v)
        };
        let original = PrototypeSet { per_class: per_class.clone() };
        let mut shuffled = per_class;
        for p in &mut shuffled {
            p.shuffle(&mut rng);
        }
        let a = value(&original);
        let b = value(&PrototypeSet { per_class: shuffled });
        prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), features in 1usize..4, classes in 2usize..6, hidden in 2usize..12, with_bank in any::<bool>()) {
        let sensor = SensorSpec::default();
        let model = ModelState::for_sensor(&sensor, features, classes, (hidden, hidden + 1), 4, seed).unwrap();
        let bank = with_bank.then(|| GmmBank::new(classes, 2, 4, 1e-4, CovarianceKind::Full).unwrap());
        let ckpt = Checkpoint { model, bank };
        prop_assert_eq!(decode_checkpoint(&encode_checkpoint(&ckpt)).unwrap(), ckpt);
    }
}
