use ctsn_core::autodiff::{finite_diff_check, Tensor};
use ctsn_core::datagen::{generate_dataset, SimParams};
use ctsn_core::math::Vec3;
use ctsn_core::network::{tiny_asset, ClothRig, Model, Streams};
use ctsn_core::skinning::Pose;
use ctsn_core::training::*;
use ctsn_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_dataset(poses: usize) -> Dataset {
    let asset = tiny_asset().unwrap();
    generate_dataset(&asset, poses, 1, &SimParams::default()).unwrap().dataset
}

fn small_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs_a: epochs,
        epochs_b: epochs,
        seed,
        embed_dim: 4,
        mesh_basis: 8,
        layers: 1,
        heads: 2,
        head_dim: 4,
        pose_hidden: vec![16, 16],
        vertex_hidden: 16,
        ..TrainConfig::default()
    }
}

fn points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect()
}

#[test]
fn identical_batches_have_zero_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = vec![points(&mut rng, 7), points(&mut rng, 7)];
    assert_eq!(loss(&a, &a).unwrap(), 0.0);
}

#[test]
fn one_displaced_vertex() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (b, n) = (3, 10);
    let gt: Vec<Vec<Vec3>> = (0..b).map(|_| points(&mut rng, n)).collect();
    let mut pred = gt.clone();
    pred[1][4][2] += 0.25;
    let l = loss(&pred, &gt).unwrap();
    assert!((l - 0.25 / (b * n) as f64).abs() < 1e-17);
}

#[test]
fn loss_rejects_mismatches() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = vec![points(&mut rng, 4)];
    let b = vec![points(&mut rng, 5)];
    assert!(loss(&a, &b).is_err());
    assert!(loss(&a, &[a[0].clone(), a[0].clone()]).is_err());
    assert!(loss(&[], &[]).is_err());
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, b) = (12, 2);
    let preds: Vec<Tensor> = (0..b)
        .map(|_| Tensor::matrix(n, 3, points(&mut rng, n).into_iter().flatten().collect()).unwrap())
        .collect();
    let targets: Vec<Vec<Vec3>> = (0..b).map(|_| points(&mut rng, n)).collect();
    let r = finite_diff_check(&preds, |tape, p| {
        let mut acc = None;
        for (pi, t) in p.iter().zip(&targets) {
            let l = distance_sum_on_tape(tape, *pi, t, 1.0 / (b * n) as f64)?;
            acc = Some(match acc {
                None => l,
                Some(a) => tape.add(a, l)?,
            });
        }
        Ok(acc.unwrap())
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn split_examples() {
    assert_eq!(train_clip_count(10), 9);
    assert_eq!(train_clip_count(2), 1);
    assert_eq!(train_clip_count(3), 2);
    assert_eq!(train_clip_count(20), 18);

    let ds = tiny_dataset(40);
    assert_eq!(ds.clips.len(), 3);
    let (train, test) = split_dataset(&ds).unwrap();
    assert_eq!(train.clips.len(), 2);
    assert_eq!(test.clips.len(), 1);
    for c in &train.clips {
        assert!(test.clips.iter().all(|t| t.name != c.name));
    }
    assert_eq!(train.clips[..], ds.clips[..2]);

    let one = Dataset::new(ds.asset.clone(), ds.clips[..1].to_vec()).unwrap();
    assert!(split_dataset(&one).is_err());
}

#[test]
fn dataset_rejects_foreign_topology() {
    let ds = tiny_dataset(2);
    let mut clips = ds.clips.clone();
    clips[0].samples[0].pose = Pose::identity(3);
    assert!(Dataset::new(ds.asset.clone(), clips).is_err());
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let ds = tiny_dataset(8);
    let cfg = small_config(5, 3);
    let a = train(&ds, &cfg).unwrap();
    let b = train(&ds, &cfg).unwrap();
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.log, b.log);
    let c = train(&ds, &TrainConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.checkpoint, c.checkpoint);
}

#[test]
fn stage_a_leaves_fine_stream_at_initialization() {
    let ds = tiny_dataset(8);
    let cfg = TrainConfig {
        epochs_b: 0,
        ..small_config(2, 4)
    };
    let out = train(&ds, &cfg).unwrap();
    let rig = ClothRig::new(&ds.asset).unwrap();
    let init = Model::new(cfg.network_config(rig.joints(), rig.cloth_vertices()), cfg.seed).unwrap();
    let trained = &out.checkpoint.model.params;
    for (i, g) in trained.groups().iter().enumerate() {
        let same = trained.tensors()[i] == init.params.tensors()[i];
        assert_eq!(same, !g.is_coarse(), "{}", trained.names()[i]);
    }
    assert_eq!(out.log.iter().filter(|r| r.stage == Some(Stage::A)).count(), 4);
    assert_eq!(out.checkpoint.adam_b.step, 0);
}

#[test]
fn coarse_stage_starts_from_the_lbs_baseline() {
    let ds = tiny_dataset(8);
    let cfg = small_config(0, 1);
    let out = train(&ds, &cfg).unwrap();
    let rig = ClothRig::new(&ds.asset).unwrap();
    let preds: Vec<Vec<Vec3>> = ds.samples().map(|s| rig.baseline(&s.pose).unwrap()).collect();
    let smooth: Vec<Vec<Vec3>> = ds
        .samples()
        .map(|s| ctsn_core::mesh::laplacian_smooth(&s.gt, 0.5, 20).unwrap().vertices().to_vec())
        .collect();
    assert!((out.baseline_loss - loss(&preds, &smooth).unwrap()).abs() < 1e-12);
}

#[test]
fn training_trends_down_on_the_tiny_asset() {
    let ds = tiny_dataset(16);
    let cfg = TrainConfig {
        epochs_a: 200,
        epochs_b: 200,
        ..small_config(0, 0)
    };
    let out = train(&ds, &cfg).unwrap();
    for stage in [Stage::A, Stage::B] {
        let losses: Vec<f64> = out.log.iter().filter(|r| r.stage == Some(stage)).map(|r| r.loss).collect();
        let windows: Vec<f64> = losses.chunks(10).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
        assert!(windows.last() < windows.first(), "{stage:?}: {windows:?}");
    }
    let rig = ClothRig::new(&ds.asset).unwrap();
    let initial = baseline_loss(&rig, ds.samples()).unwrap();
    assert!(out.final_loss < initial, "{} vs {initial}", out.final_loss);
}

#[test]
fn checkpoint_round_trips_through_named_tensors() {
    let ds = tiny_dataset(8);
    let cfg = small_config(9, 2);
    let out = train(&ds, &cfg).unwrap();
    let named = out.checkpoint.named_tensors();
    let rig = ClothRig::new(&ds.asset).unwrap();
    let config = cfg.network_config(rig.joints(), rig.cloth_vertices());
    let back = Checkpoint::from_named(config.clone(), named.clone()).unwrap();
    assert_eq!(back, out.checkpoint);
    let reloaded = evaluate_loss(&back.model, &rig, ds.samples(), Streams::FULL).unwrap();
    assert!((reloaded - out.final_loss).abs() < 1e-12);

    let mut missing = named.clone();
    missing.pop();
    assert!(Checkpoint::from_named(config.clone(), missing).is_err());
    let mut bad = named;
    bad[0].1 = Tensor::scalar(1.0);
    assert!(Checkpoint::from_named(config, bad).is_err());
}

#[test]
fn runaway_learning_rate_is_reported() {
    let ds = tiny_dataset(8);
    let cfg = TrainConfig {
        lr: 10.0,
        ..small_config(0, 20)
    };
    match train(&ds, &cfg) {
        Err(Error::Diverged { stage, .. }) => assert_eq!(stage, 'A'),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.final_loss)),
    }
}

#[test]
fn invalid_config_is_rejected() {
    let ds = tiny_dataset(2);
    for cfg in [
        TrainConfig { lr: 0.0, ..small_config(0, 1) },
        TrainConfig { batch_size: 0, ..small_config(0, 1) },
        TrainConfig { smooth_lambda: 1.5, ..small_config(0, 1) },
    ] {
        assert!(train(&ds, &cfg).is_err());
    }
}

#[test]
fn disabled_weight_residual_stays_zero() {
    let ds = tiny_dataset(8);
    let cfg = TrainConfig {
        weight_residual: false,
        ..small_config(3, 3)
    };
    let out = train(&ds, &cfg).unwrap();
    let dwc = out.checkpoint.model.params.get("dwc").unwrap();
    assert!(dwc.data().iter().all(|&x| x == 0.0));
    assert!(!cfg.streams(Stage::B).weight_residual);
    assert!(cfg.streams(Stage::B).mesh && !cfg.streams(Stage::A).mesh);
}
