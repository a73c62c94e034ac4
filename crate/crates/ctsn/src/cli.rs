//! `ctsn` subcommands.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ctsn_core::datagen::{generate_dataset, make_asset, sample_poses, AssetKind, SimParams};
use ctsn_core::mesh::Mesh;
use ctsn_core::network::{reference_gradient_check, tiny_asset, ClothRig, Model, NetworkConfig, Streams};
use ctsn_core::postprocess::{default_epsilon, detect_penetrations, eval_metrics, resolve_penetrations};
use ctsn_core::skinning::{Pose, RigAsset};
use ctsn_core::training::{baseline_loss, evaluate_loss, split_dataset, train_with, Dataset, TrainConfig};

use crate::checkpoint::{load_checkpoint, save_checkpoint, ModelMeta};
use crate::dataset::{frame_stem, read_dataset, write_dataset, DatasetMeta};
use crate::error::{write, Error, Result};
use crate::obj::{read_obj, write_obj};
use crate::report::{format_log, format_metrics, log_line, MetricsRow};
use crate::rig::{read_pose, read_rig};

/// Largest relative gradient error `grad-check` accepts.
pub const GRAD_CHECK_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "ctsn", version, about = "Two-stream skinning network for skeleton-driven cloth")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural asset and relax ground-truth cloth for sampled poses.
    GenData(GenDataArgs),
    /// Train both stages on a dataset directory.
    Train(TrainArgs),
    /// Predict cloth meshes for poses.
    Predict(PredictArgs),
    /// Compare predicted meshes against ground truth.
    Eval(EvalArgs),
    /// Time single-pose forward passes.
    Bench(BenchArgs),
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value = "tube-skirt-biped")]
    pub kind: AssetKind,
    #[arg(long, default_value_t = 64)]
    pub poses: usize,
    #[arg(long, default_value_t = 12)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for `model.ckpt` and `loss.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Epochs per stage.
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    /// Pose embedding width.
    #[arg(long, default_value_t = 32)]
    pub m: usize,
    /// Number of mesh basis matrices.
    #[arg(long, default_value_t = 128)]
    pub k: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 20)]
    pub smooth_iters: usize,
    /// Keep the initial skinning weights instead of learning a residual.
    #[arg(long)]
    pub no_weight_residual: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Predict every pose of this dataset, using its asset.
    #[arg(long, conflicts_with_all = ["asset", "pose"])]
    pub dataset: Option<PathBuf>,
    #[arg(long, requires = "pose")]
    pub asset: Option<PathBuf>,
    #[arg(long, requires = "asset")]
    pub pose: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub resolve_penetrations: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted OBJ, or a `predict` output directory when `--dataset` is given.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, conflicts_with = "dataset")]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Rig used to count penetrations for a single `--pred`/`--gt` pair.
    #[arg(long, requires = "pose", conflicts_with = "dataset")]
    pub asset: Option<PathBuf>,
    #[arg(long, requires = "asset")]
    pub pose: Option<PathBuf>,
    /// Metrics CSV; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, requires = "asset")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub asset: Option<PathBuf>,
    /// Tube-skirt resolution when no asset is given (55 gives 3025 vertices).
    #[arg(long, default_value_t = 55)]
    pub resolution: usize,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// `tiny` for the built-in 30-vertex skirt, or a rig JSON path.
    #[arg(long, default_value = "tiny")]
    pub asset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return 2;
    }
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("CTSN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("CTSN_THREADS must be a positive integer, got {v:?}"))?;
    // A pool may already exist when `run` is called repeatedly in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::GradCheck(a) => grad_check(a),
    }
}

fn gen_data(a: &GenDataArgs) -> Result<i32> {
    let asset = make_asset(a.kind, a.resolution, a.seed)?;
    let params = SimParams::default();
    let data = generate_dataset(&asset, a.poses, a.seed, &params)?;
    let meta = DatasetMeta::new(a.kind, a.resolution, a.seed, &params, &data);
    write_dataset(&a.out, &data.dataset, &meta)?;
    println!(
        "wrote {} samples in {} clips to {}",
        data.dataset.sample_count(),
        data.dataset.clips.len(),
        a.out.display()
    );
    if !meta.unconverged.is_empty() {
        eprintln!(
            "warning: {} frames hit the relaxation iteration cap: {}",
            meta.unconverged.len(),
            meta.unconverged.join(", ")
        );
    }
    Ok(0)
}

pub fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        lr: a.lr,
        batch_size: a.batch_size,
        epochs_a: a.epochs,
        epochs_b: a.epochs,
        seed: a.seed,
        embed_dim: a.m,
        mesh_basis: a.k,
        smooth_lambda: a.lambda,
        smooth_iters: a.smooth_iters,
        weight_residual: !a.no_weight_residual,
        ..TrainConfig::default()
    }
}

fn train(a: &TrainArgs) -> Result<i32> {
    let ds = read_dataset(&a.dataset)?;
    let (train_ds, test_ds) = if ds.clips.len() >= 2 {
        let (tr, te) = split_dataset(&ds)?;
        (tr, Some(te))
    } else {
        eprintln!("warning: single clip, training on all samples with no held-out clip");
        (ds, None)
    };
    let cfg = train_config(a);
    let mut stderr = std::io::stderr();
    let every = (cfg.epochs_a.max(cfg.epochs_b) / 20).max(1);
    let out = train_with(&train_ds, &cfg, &mut |row| {
        if row.stage.is_none() || row.epoch % every == 0 || row.epoch == 1 {
            let _ = writeln!(stderr, "{}", log_line(row));
        }
    })?;
    let rig = ClothRig::new(&train_ds.asset)?;
    let meta = ModelMeta::new(&out.checkpoint.model.config, cfg.weight_residual).with_training(&cfg, out.final_loss);
    save_checkpoint(&a.out.join("model.ckpt"), &out.checkpoint, &meta)?;
    write(&a.out.join("loss.csv"), format_log(&out.log))?;
    println!("train_loss,{}", out.final_loss);
    println!("train_lbs_baseline,{}", baseline_loss(&rig, train_ds.samples())?);
    if let Some(te) = test_ds {
        let model = &out.checkpoint.model;
        println!("test_loss,{}", evaluate_loss(model, &rig, te.samples(), meta.streams())?);
        println!("test_lbs_baseline,{}", baseline_loss(&rig, te.samples())?);
    }
    Ok(0)
}

fn posed_body(rig: &ClothRig, asset: &RigAsset, pose: &Pose) -> Result<Mesh> {
    Ok(asset.body.with_vertices(rig.posed_body(pose)?)?)
}

/// Predicted cloth and, with `resolve`, penetration counts before and after.
fn predict_one(
    model: &Model,
    streams: Streams,
    rig: &ClothRig,
    asset: &RigAsset,
    pose: &Pose,
    resolve: bool,
) -> Result<(Mesh, Option<(usize, usize)>)> {
    let pred = asset.cloth.with_vertices(model.predict_vertices(rig, pose, streams)?)?;
    if !resolve {
        return Ok((pred, None));
    }
    let body = posed_body(rig, asset, pose)?;
    let r = resolve_penetrations(&pred, &body, default_epsilon(&body), 10)?;
    let counts = (r.history[0], r.remaining.len());
    Ok((r.cloth, Some(counts)))
}

fn predict(a: &PredictArgs) -> Result<i32> {
    let (ck, meta) = load_checkpoint(&a.checkpoint)?;
    let (asset, jobs): (RigAsset, Vec<(PathBuf, Pose)>) = match (&a.dataset, &a.asset) {
        (Some(dir), _) => {
            let ds = read_dataset(dir)?;
            let jobs = dataset_keys(&ds)
                .into_iter()
                .zip(ds.samples())
                .map(|((clip, frame), s)| {
                    let p = a.out.join("clips").join(clip).join(format!("{}.pred.obj", frame_stem(frame)));
                    (p, s.pose.clone())
                })
                .collect();
            (ds.asset, jobs)
        }
        (None, Some(rig_path)) => {
            let asset = read_rig(rig_path)?;
            let jobs = a
                .pose
                .iter()
                .map(|p| {
                    let stem = file_stem(p, ".pose.json");
                    Ok((a.out.join(format!("{stem}.pred.obj")), read_pose(p)?))
                })
                .collect::<Result<Vec<_>>>()?;
            (asset, jobs)
        }
        (None, None) => {
            return Err(Error::schema(&a.checkpoint, "predict needs --dataset or --asset with --pose"));
        }
    };
    let rig = ClothRig::new(&asset)?;
    let mut resolved = (0, 0);
    for (path, pose) in &jobs {
        let (mesh, counts) = predict_one(&ck.model, meta.streams(), &rig, &asset, pose, a.resolve_penetrations)?;
        if let Some((b, r)) = counts {
            resolved.0 += b;
            resolved.1 += r;
        }
        write_obj(path, &mesh)?;
    }
    println!("wrote {} predictions to {}", jobs.len(), a.out.display());
    if a.resolve_penetrations {
        println!("penetrated_before,{}", resolved.0);
        println!("penetrated_after,{}", resolved.1);
    }
    Ok(0)
}

fn dataset_keys(ds: &Dataset) -> Vec<(String, usize)> {
    ds.clips
        .iter()
        .flat_map(|c| (0..c.samples.len()).map(move |f| (c.name.clone(), f)))
        .collect()
}

fn file_stem(path: &Path, suffix: &str) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("sample");
    name.strip_suffix(suffix)
        .or_else(|| name.strip_suffix(".obj"))
        .unwrap_or(name)
        .to_string()
}

fn penetration_counts(pred: &Mesh, body: &Mesh) -> Result<(usize, usize)> {
    let before = detect_penetrations(pred, body)?.len();
    let after = resolve_penetrations(pred, body, default_epsilon(body), 10)?.remaining.len();
    Ok((before, after))
}

fn eval(a: &EvalArgs) -> Result<i32> {
    let mut rows = Vec::new();
    if let Some(dir) = &a.dataset {
        let ds = read_dataset(dir)?;
        let rig = ClothRig::new(&ds.asset)?;
        for ((clip, frame), s) in dataset_keys(&ds).into_iter().zip(ds.samples()) {
            let stem = frame_stem(frame);
            let pred = read_obj(&a.pred.join("clips").join(&clip).join(format!("{stem}.pred.obj")))?;
            let m = eval_metrics(&pred, &s.gt)?;
            let body = posed_body(&rig, &ds.asset, &s.pose)?;
            rows.push(MetricsRow {
                sample: format!("{clip}/{stem}"),
                e_dist: m.e_dist,
                e_norm: m.e_norm,
                penetrated: Some(penetration_counts(&pred, &body)?),
            });
        }
    } else {
        let gt_path = a
            .gt
            .as_ref()
            .ok_or_else(|| Error::schema(&a.pred, "eval needs --gt or --dataset"))?;
        let pred = read_obj(&a.pred)?;
        let gt = read_obj(gt_path)?;
        let m = eval_metrics(&pred, &gt).map_err(|e| match e {
            ctsn_core::Error::Validation(msg) => Error::schema(&a.pred, msg),
            other => other.into(),
        })?;
        let penetrated = match (&a.asset, &a.pose) {
            (Some(rig_path), Some(pose_path)) => {
                let asset = read_rig(rig_path)?;
                let rig = ClothRig::new(&asset)?;
                let body = posed_body(&rig, &asset, &read_pose(pose_path)?)?;
                Some(penetration_counts(&pred, &body)?)
            }
            _ => None,
        };
        rows.push(MetricsRow {
            sample: file_stem(&a.pred, ".pred.obj"),
            e_dist: m.e_dist,
            e_norm: m.e_norm,
            penetrated,
        });
    }
    let csv = format_metrics(&rows);
    match &a.out {
        Some(p) => write(p, &csv)?,
        None => print!("{csv}"),
    }
    let n = rows.len() as f64;
    println!("E_dist_m,{}", rows.iter().map(|r| r.e_dist).sum::<f64>() / n);
    println!("E_norm_deg,{}", rows.iter().map(|r| r.e_norm).sum::<f64>() / n);
    Ok(0)
}

fn bench(a: &BenchArgs) -> Result<i32> {
    if a.reps == 0 {
        return Err(Error::Core(ctsn_core::Error::Validation("--reps must be >= 1".into())));
    }
    let (asset, model, streams) = match (&a.checkpoint, &a.asset) {
        (Some(ck_path), Some(rig_path)) => {
            let (ck, meta) = load_checkpoint(ck_path)?;
            (read_rig(rig_path)?, ck.model, meta.streams())
        }
        (None, Some(rig_path)) => {
            let asset = read_rig(rig_path)?;
            let cfg = NetworkConfig::new(asset.joint_count(), asset.cloth.vertex_count());
            (asset, Model::new(cfg, a.seed)?, Streams::FULL)
        }
        _ => {
            let asset = make_asset(AssetKind::TubeSkirtBiped, a.resolution, a.seed)?;
            let cfg = NetworkConfig::new(asset.joint_count(), asset.cloth.vertex_count());
            (asset, Model::new(cfg, a.seed)?, Streams::FULL)
        }
    };
    let rig = ClothRig::new(&asset)?;
    let poses: Vec<Pose> = sample_poses(&asset, 16, a.seed)?.concat();
    // Warm-up pass.
    model.predict_vertices(&rig, &poses[poses.len() / 2], streams)?;
    let mut ms = Vec::with_capacity(a.reps);
    for r in 0..a.reps {
        let pose = &poses[r % poses.len()];
        let t = Instant::now();
        let v = model.predict_vertices(&rig, pose, streams)?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(v);
    }
    let mean = ms.iter().sum::<f64>() / ms.len() as f64;
    let min = ms.iter().copied().fold(f64::INFINITY, f64::min);
    let max = ms.iter().copied().fold(0.0, f64::max);
    println!("cloth_vertices,{}", rig.cloth_vertices());
    println!("reps,{}", a.reps);
    println!("latency_ms_mean,{mean:.3}");
    println!("latency_ms_min,{min:.3}");
    println!("latency_ms_max,{max:.3}");
    Ok(0)
}

fn grad_check(a: &GradCheckArgs) -> Result<i32> {
    let asset = if a.asset == "tiny" {
        tiny_asset()?
    } else {
        read_rig(Path::new(&a.asset))?
    };
    let checks = reference_gradient_check(&asset, a.seed)?;
    println!("group,tensors,elements,max_rel_error,max_abs_error");
    for c in &checks {
        println!(
            "{},{},{},{:e},{:e}",
            c.group.name(),
            c.tensors,
            c.elements,
            c.max_rel_error,
            c.max_abs_error
        );
    }
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    println!("max_rel_error,{worst:e}");
    Ok(if worst < GRAD_CHECK_THRESHOLD { 0 } else { 1 })
}
