use std::path::Path;

use ctsn::checkpoint::{decode_tensors, encode_tensors, load_checkpoint, save_checkpoint, ModelMeta};
use ctsn::dataset::{read_dataset, read_meta, write_dataset, DatasetMeta};
use ctsn::obj::{format_obj, parse_obj, read_obj, write_obj};
use ctsn::report::{format_log, format_metrics, MetricsRow, LOG_HEADER};
use ctsn::rig::{format_pose, parse_pose, read_pose, read_rig, write_pose, write_rig};
use ctsn::Error;
use ctsn_core::autodiff::Tensor;
use ctsn_core::datagen::{generate_dataset, make_asset, sample_poses, AssetKind, SimParams};
use ctsn_core::mesh::{grid, Mesh};
use ctsn_core::network::{tiny_asset, Model, NetworkConfig};
use ctsn_core::training::{Checkpoint, LogRow, Stage, TrainConfig};
use proptest::prelude::*;

fn p() -> &'static Path {
    Path::new("mem.obj")
}

#[test]
fn obj_corner_formats_and_fans() {
    let text = "# comment\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0 # trailing\nvn 0 0 1\nvt 0 0\n\
                f 1/1/1 2/2/1 3//1 4\n";
    let m = parse_obj(text, p()).unwrap();
    assert_eq!(m.vertex_count(), 4);
    assert_eq!(m.triangles(), &[[0, 1, 2], [0, 2, 3]]);
}

#[test]
fn obj_negative_indices_are_relative() {
    let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n", p()).unwrap();
    assert_eq!(m.triangles(), &[[0, 1, 2]]);
}

#[test]
fn obj_errors_carry_line_numbers() {
    let cases = [
        ("v 0 0 0\nv 1 0\n", 2),
        ("v 0 0 x\n", 1),
        ("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2 9\n", 5),
        ("v 0 0 0\nv 1 0 0\nf 1 2\n", 3),
        ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 0\n", 4),
        ("v 0 0 nan\n", 1),
    ];
    for (text, want) in cases {
        match parse_obj(text, p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
}

#[test]
fn obj_file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/grid.obj");
    let g = grid(4, 3, 0.1).unwrap();
    let moved: Vec<_> = g.vertices().iter().map(|v| [v[0] + 1.0 / 3.0, v[1] * 1e-9, v[2] - 7.25]).collect();
    let g = g.with_vertices(moved).unwrap();
    write_obj(&path, &g).unwrap();
    assert_eq!(read_obj(&path).unwrap(), g);
}

#[test]
fn missing_obj_is_io_error() {
    let e = read_obj(Path::new("/nonexistent/x.obj")).unwrap_err();
    assert!(matches!(e, Error::Io { .. }));
    assert_eq!(e.exit_code(), 2);
}

proptest! {
    #[test]
    fn obj_text_round_trip(coords in prop::collection::vec(prop::array::uniform3(-1e6f64..1e6), 3..20)) {
        let n = coords.len();
        let tris: Vec<[usize; 3]> = (0..n - 2).map(|i| [i, i + 1, i + 2]).collect();
        let m = Mesh::new(coords, tris).unwrap();
        let back = parse_obj(&format_obj(&m), p()).unwrap();
        prop_assert_eq!(back, m);
    }
}

#[test]
fn rig_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for asset in [tiny_asset().unwrap(), make_asset(AssetKind::ArmCape, 5, 2).unwrap()] {
        let path = dir.path().join("rig/asset.json");
        write_rig(&path, &asset).unwrap();
        assert_eq!(read_rig(&path).unwrap(), asset);
    }
}

#[test]
fn rig_schema_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("asset.json");
    write_rig(&path, &tiny_asset().unwrap()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();

    let extra = text.replacen('{', "{\"surprise\":1,", 1);
    std::fs::write(&path, extra).unwrap();
    assert!(matches!(read_rig(&path), Err(Error::Parse { .. })));

    let bad_hip = text.replace("\"hip\":0", "\"hip\":99");
    assert_ne!(bad_hip, text);
    std::fs::write(&path, bad_hip).unwrap();
    assert!(matches!(read_rig(&path), Err(Error::Schema { .. })));
}

#[test]
fn pose_round_trip() {
    let asset = make_asset(AssetKind::TubeSkirtBiped, 6, 0).unwrap();
    let pose = &sample_poses(&asset, 16, 5).unwrap()[0][9];
    let text = format_pose(pose);
    assert_eq!(&parse_pose(&text, p()).unwrap(), pose);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pose.json");
    write_pose(&path, pose).unwrap();
    assert_eq!(&read_pose(&path).unwrap(), pose);
}

#[test]
fn pose_rejects_wrong_arity() {
    let e = parse_pose("{\"transforms\": [[1,0,0,0,0,1,0,0,0,0,1]]}", p()).unwrap_err();
    assert!(matches!(e, Error::Parse { .. }));
}

fn small_model() -> Model {
    let cfg = NetworkConfig {
        embed_dim: 4,
        mesh_basis: 8,
        pose_hidden: vec![16],
        layers: 1,
        heads: 2,
        head_dim: 4,
        vertex_hidden: 16,
        ..NetworkConfig::new(4, 30)
    };
    Model::new(cfg, 3).unwrap()
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ck = Checkpoint::fresh(small_model());
    let meta = ModelMeta::new(&ck.model.config, false).with_training(&TrainConfig::default(), 0.125);
    save_checkpoint(&path, &ck, &meta).unwrap();
    let (back, back_meta) = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back_meta, meta);
    assert!(!back_meta.streams().weight_residual);
}

#[test]
fn checkpoint_corruption_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ck = Checkpoint::fresh(small_model());
    save_checkpoint(&path, &ck, &ModelMeta::new(&ck.model.config, true)).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Schema { .. })));

    let mut longer = bytes.clone();
    longer.push(0);
    std::fs::write(&path, &longer).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Schema { .. })));

    let text = String::from_utf8_lossy(&bytes).replacen("\"version\":1", "\"version\":9", 1);
    std::fs::write(&path, text.as_bytes()).unwrap();
    assert!(load_checkpoint(&path).is_err());

    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Schema { .. })));
}

#[test]
fn tensor_container_round_trip() {
    let named = vec![
        ("a".to_string(), Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap()),
        ("b".to_string(), Tensor::new(vec![1], vec![-0.0]).unwrap()),
    ];
    let bytes = encode_tensors(&named, serde_json::json!({"k": 1}));
    let (back, meta) = decode_tensors(&bytes, p()).unwrap();
    assert_eq!(back, named);
    assert_eq!(meta["k"], 1);
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let asset = make_asset(AssetKind::ArmCape, 5, 1).unwrap();
    let params = SimParams {
        substeps: 2,
        ..SimParams::default()
    };
    let data = generate_dataset(&asset, 20, 1, &params).unwrap();
    let meta = DatasetMeta::new(AssetKind::ArmCape, 5, 1, &params, &data);
    write_dataset(dir.path(), &data.dataset, &meta).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap(), data.dataset);
    let back = read_meta(dir.path()).unwrap();
    assert_eq!(back, meta);
    assert_eq!(back.poses, 20);
    assert_eq!(back.unconverged.len(), data.unconverged());
}

#[test]
fn dataset_without_clips_is_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    write_rig(&dir.path().join("asset.json"), &tiny_asset().unwrap()).unwrap();
    std::fs::create_dir(dir.path().join("clips")).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Schema { .. })));
}

#[test]
fn csv_formats() {
    let rows = [
        LogRow {
            epoch: 1,
            stage: Some(Stage::A),
            loss: 0.5,
        },
        LogRow {
            epoch: 1,
            stage: None,
            loss: 0.25,
        },
    ];
    assert_eq!(format_log(&rows), format!("{LOG_HEADER}\n1,A,0.5\n1,final,0.25\n"));
    let m = format_metrics(&[
        MetricsRow {
            sample: "a".into(),
            e_dist: 0.0,
            e_norm: 1.5,
            penetrated: Some((3, 0)),
        },
        MetricsRow {
            sample: "b".into(),
            e_dist: 0.5,
            e_norm: 0.0,
            penetrated: None,
        },
    ]);
    let lines: Vec<_> = m.lines().collect();
    assert_eq!(lines[1..], ["a,0,1.5,3,0", "b,0.5,0,,"]);
}
