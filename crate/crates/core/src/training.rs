//! Loss, clip-level split and the two-stage training procedure.
//!
//! Stage A fits the pose embedding, skeleton basis and weight residual to
//! Laplacian-smoothed targets with the mesh stream held at zero. Stage B
//! freezes those and fits the graph transformer, vertex MLP and mesh basis
//! to the full targets.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamState, Tape, Tensor, Var};
use crate::math::{self, Vec3};
use crate::mesh::{laplacian_smooth, Mesh};
use crate::network::{ClothRig, Model, NetworkConfig, ParamGroup, Streams};
use crate::skinning::{Pose, RigAsset};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub pose: Pose,
    pub gt: Mesh,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub name: String,
    pub samples: Vec<Sample>,
}

/// Clips of `(pose, ground-truth cloth)` pairs for one asset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub asset: RigAsset,
    pub clips: Vec<Clip>,
}

impl Dataset {
    pub fn new(asset: RigAsset, clips: Vec<Clip>) -> Result<Self> {
        for c in &clips {
            if c.samples.is_empty() {
                return Err(Error::validation(format!("clip {} is empty", c.name)));
            }
            for (i, s) in c.samples.iter().enumerate() {
                if !s.gt.same_topology(&asset.cloth) {
                    return Err(Error::validation(format!(
                        "clip {} frame {i}: ground truth does not share the cloth template topology",
                        c.name
                    )));
                }
                if s.pose.joint_count() != asset.joint_count() {
                    return Err(Error::validation(format!(
                        "clip {} frame {i}: pose has {} joints, skeleton has {}",
                        c.name,
                        s.pose.joint_count(),
                        asset.joint_count()
                    )));
                }
            }
        }
        Ok(Dataset { asset, clips })
    }

    pub fn sample_count(&self) -> usize {
        self.clips.iter().map(|c| c.samples.len()).sum()
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.clips.iter().flat_map(|c| c.samples.iter())
    }
}

/// Number of training clips: `ceil(0.9 * count)`, capped so at least one
/// clip is held out.
pub fn train_clip_count(count: usize) -> usize {
    (count * 9).div_ceil(10).min(count.saturating_sub(1))
}

/// Leading clips train, trailing clips test; whole clips only.
pub fn split_dataset(ds: &Dataset) -> Result<(Dataset, Dataset)> {
    if ds.clips.len() < 2 {
        return Err(Error::validation(format!(
            "need at least 2 clips to split, got {}",
            ds.clips.len()
        )));
    }
    let k = train_clip_count(ds.clips.len());
    Ok((
        Dataset {
            asset: ds.asset.clone(),
            clips: ds.clips[..k].to_vec(),
        },
        Dataset {
            asset: ds.asset.clone(),
            clips: ds.clips[k..].to_vec(),
        },
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs_a: usize,
    pub epochs_b: usize,
    pub seed: u64,
    /// `m`.
    pub embed_dim: usize,
    /// `k`.
    pub mesh_basis: usize,
    pub smooth_lambda: f64,
    pub smooth_iters: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub pose_hidden: Vec<usize>,
    pub vertex_hidden: usize,
    /// Stage A aborts when an epoch's loss exceeds this multiple of the
    /// plain-LBS starting loss.
    pub divergence_factor: f64,
    /// When false the cloth keeps its initial skinning weights and the weight
    /// residual stays at zero.
    pub weight_residual: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 4,
            epochs_a: 500,
            epochs_b: 500,
            seed: 0,
            embed_dim: 32,
            mesh_basis: 128,
            smooth_lambda: 0.5,
            smooth_iters: 20,
            layers: 2,
            heads: 4,
            head_dim: 16,
            pose_hidden: alloc::vec![64, 64],
            vertex_hidden: 64,
            divergence_factor: 2.0,
            weight_residual: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be >= 1"));
        }
        if self.embed_dim == 0 || self.mesh_basis == 0 {
            return Err(Error::validation("m and k must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.smooth_lambda) {
            return Err(Error::validation(format!(
                "smoothing lambda must lie in [0, 1], got {}",
                self.smooth_lambda
            )));
        }
        Ok(())
    }

    /// Streams used by `stage` under this configuration.
    pub fn streams(&self, stage: Stage) -> Streams {
        Streams {
            weight_residual: self.weight_residual,
            ..stage.streams()
        }
    }

    pub fn network_config(&self, joints: usize, cloth_vertices: usize) -> NetworkConfig {
        NetworkConfig {
            joints,
            cloth_vertices,
            embed_dim: self.embed_dim,
            mesh_basis: self.mesh_basis,
            pose_hidden: self.pose_hidden.clone(),
            layers: self.layers,
            heads: self.heads,
            head_dim: self.head_dim,
            vertex_hidden: self.vertex_hidden,
        }
    }
}

/// Mean per-vertex Euclidean distance over every vertex of every sample.
pub fn loss(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::validation(format!(
            "loss over {} predictions and {} targets",
            pred.len(),
            gt.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() {
            return Err(Error::validation(format!(
                "sample {i}: {} predicted vertices, {} target vertices",
                p.len(),
                g.len()
            )));
        }
        sum += p.iter().zip(g).map(|(a, b)| math::dist(*a, *b)).sum::<f64>();
        count += p.len();
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(sum / count as f64)
}

/// `sum_i |pred_i - target_i| * scale` on a tape.
pub fn distance_sum_on_tape(tape: &mut Tape, pred: Var, target: &[Vec3], scale: f64) -> Result<Var> {
    let t = tape.constant(Tensor::matrix(target.len(), 3, target.iter().flatten().copied().collect())?);
    let d = tape.sub(pred, t)?;
    let n = tape.l2_norm_rows(d)?;
    let s = tape.sum_all(n)?;
    tape.scale(s, scale)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    A,
    B,
}

impl Stage {
    pub fn label(self) -> char {
        match self {
            Stage::A => 'A',
            Stage::B => 'B',
        }
    }

    pub fn trains(self, g: ParamGroup) -> bool {
        match self {
            Stage::A => g.is_coarse(),
            Stage::B => !g.is_coarse(),
        }
    }

    pub fn streams(self) -> Streams {
        match self {
            Stage::A => Streams::COARSE,
            Stage::B => Streams::FULL,
        }
    }
}

/// One training-log line; `stage` is `None` for the final evaluation row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub stage: Option<Stage>,
    pub loss: f64,
}

impl LogRow {
    pub fn stage_label(&self) -> &'static str {
        match self.stage {
            Some(Stage::A) => "A",
            Some(Stage::B) => "B",
            None => "final",
        }
    }
}

/// Trained parameters plus optimizer state for both stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Moments for the stage-A parameters, in store order.
    pub adam_a: AdamState,
    /// Moments for the stage-B parameters, in store order.
    pub adam_b: AdamState,
}

impl Checkpoint {
    pub fn fresh(model: Model) -> Self {
        let pick = |stage: Stage| -> Vec<Tensor> {
            stage_indices(&model, stage)
                .into_iter()
                .map(|i| model.params.tensors()[i].clone())
                .collect()
        };
        let adam_a = AdamState::new(&pick(Stage::A));
        let adam_b = AdamState::new(&pick(Stage::B));
        Checkpoint { model, adam_a, adam_b }
    }

    /// Every tensor under a stable name: parameters, then `opt.<name>.m`,
    /// `opt.<name>.v`, `opt.step.a` and `opt.step.b`.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let p = &self.model.params;
        let mut out: Vec<(String, Tensor)> = p.names().iter().cloned().zip(p.tensors().iter().cloned()).collect();
        for (stage, st) in [(Stage::A, &self.adam_a), (Stage::B, &self.adam_b)] {
            for (k, i) in stage_indices(&self.model, stage).into_iter().enumerate() {
                let name = &p.names()[i];
                out.push((format!("opt.{name}.m"), st.m[k].clone()));
                out.push((format!("opt.{name}.v"), st.v[k].clone()));
            }
        }
        out.push(("opt.step.a".into(), Tensor::scalar(self.adam_a.step as f64)));
        out.push(("opt.step.b".into(), Tensor::scalar(self.adam_b.step as f64)));
        out
    }

    /// Inverse of [`Checkpoint::named_tensors`] for a model of shape `config`.
    pub fn from_named(config: NetworkConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut ck = Checkpoint::fresh(Model::new(config, 0)?);
        let expected = ck.named_tensors();
        if named.len() != expected.len() {
            return Err(Error::validation(format!(
                "checkpoint holds {} tensors, expected {}",
                named.len(),
                expected.len()
            )));
        }
        let lookup = |name: &str| -> Result<&Tensor> {
            named
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::validation(format!("checkpoint is missing tensor {name}")))
        };
        let mut params = Vec::with_capacity(ck.model.params.len());
        for name in ck.model.params.names() {
            params.push((name.clone(), lookup(name)?.clone()));
        }
        ck.model.params.load_named(&params)?;
        for (stage, idx) in [(Stage::A, stage_indices(&ck.model, Stage::A)), (Stage::B, stage_indices(&ck.model, Stage::B))] {
            let st = match stage {
                Stage::A => &mut ck.adam_a,
                Stage::B => &mut ck.adam_b,
            };
            for (k, i) in idx.into_iter().enumerate() {
                let name = &ck.model.params.names()[i];
                for (slot, suffix) in [(&mut st.m[k], "m"), (&mut st.v[k], "v")] {
                    let t = lookup(&format!("opt.{name}.{suffix}"))?;
                    if t.shape() != slot.shape() {
                        return Err(Error::validation(format!(
                            "tensor opt.{name}.{suffix}: shape {:?}, expected {:?}",
                            t.shape(),
                            slot.shape()
                        )));
                    }
                    *slot = t.clone();
                }
            }
            let label = if stage == Stage::A { "a" } else { "b" };
            let step = lookup(&format!("opt.step.{label}"))?;
            let v = step.data().first().copied().unwrap_or(-1.0);
            if step.numel() != 1 || v < 0.0 || libm::trunc(v) != v {
                return Err(Error::validation(format!("opt.step.{label} must hold one non-negative integer")));
            }
            st.step = v as u64;
        }
        Ok(ck)
    }
}

fn stage_indices(model: &Model, stage: Stage) -> Vec<usize> {
    (0..model.params.len())
        .filter(|&i| stage.trains(model.params.groups()[i]))
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    /// Plain-LBS loss against the smoothed targets before stage A.
    pub baseline_loss: f64,
    /// Full-model loss against the full targets after training.
    pub final_loss: f64,
}

/// Mean per-vertex distance of `model`'s predictions over `samples`.
pub fn evaluate_loss<'a>(
    model: &Model,
    rig: &ClothRig,
    samples: impl IntoIterator<Item = &'a Sample>,
    streams: Streams,
) -> Result<f64> {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for s in samples {
        preds.push(model.predict_vertices(rig, &s.pose, streams)?);
        gts.push(s.gt.vertices().to_vec());
    }
    loss(&preds, &gts)
}

/// Mean per-vertex distance of plain LBS with the initial weights.
pub fn baseline_loss<'a>(rig: &ClothRig, samples: impl IntoIterator<Item = &'a Sample>) -> Result<f64> {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for s in samples {
        preds.push(rig.baseline(&s.pose)?);
        gts.push(s.gt.vertices().to_vec());
    }
    loss(&preds, &gts)
}

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(ds, cfg, &mut |_| {})
}

/// Two-stage training; `on_row` sees every log row as it is produced.
pub fn train_with(ds: &Dataset, cfg: &TrainConfig, on_row: &mut dyn FnMut(&LogRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples: Vec<&Sample> = ds.samples().collect();
    if samples.is_empty() {
        return Err(Error::validation("training set has no samples"));
    }
    let rig = ClothRig::new(&ds.asset)?;
    let model = Model::new(cfg.network_config(rig.joints(), rig.cloth_vertices()), cfg.seed)?;
    let mut ck = Checkpoint::fresh(model);

    let smooth: Vec<Vec<Vec3>> = samples
        .iter()
        .map(|s| laplacian_smooth(&s.gt, cfg.smooth_lambda, cfg.smooth_iters).map(|m| m.vertices().to_vec()))
        .collect::<Result<_>>()?;
    let full: Vec<Vec<Vec3>> = samples.iter().map(|s| s.gt.vertices().to_vec()).collect();
    let poses: Vec<&Pose> = samples.iter().map(|s| &s.pose).collect();

    let baseline = {
        let preds: Vec<Vec<Vec3>> = poses
            .iter()
            .map(|p| ck.model.predict_vertices(&rig, p, cfg.streams(Stage::A)))
            .collect::<Result<_>>()?;
        loss(&preds, &smooth)?
    };

    let mut log = Vec::new();
    for (stage, targets, epochs) in [(Stage::A, &smooth, cfg.epochs_a), (Stage::B, &full, cfg.epochs_b)] {
        let ctx = StageCtx {
            stage,
            rig: &rig,
            poses: &poses,
            targets,
            cfg,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x5eed_0000 + stage.label() as u64));
        let mut order: Vec<usize> = (0..poses.len()).collect();
        for epoch in 1..=epochs {
            order.shuffle(&mut rng);
            let l = ctx.run_epoch(&mut ck, &order, epoch)?;
            if !l.is_finite() || (stage == Stage::A && l > cfg.divergence_factor * baseline && baseline > 0.0) {
                return Err(Error::Diverged {
                    stage: stage.label(),
                    epoch,
                    step: order.len().div_ceil(cfg.batch_size),
                    loss: l,
                });
            }
            let row = LogRow {
                epoch,
                stage: Some(stage),
                loss: l,
            };
            on_row(&row);
            log.push(row);
        }
    }

    let preds: Vec<Vec<Vec3>> = poses
        .iter()
        .map(|p| ck.model.predict_vertices(&rig, p, cfg.streams(Stage::B)))
        .collect::<Result<_>>()?;
    let final_loss = loss(&preds, &full)?;
    let row = LogRow {
        epoch: cfg.epochs_b,
        stage: None,
        loss: final_loss,
    };
    on_row(&row);
    log.push(row);
    Ok(TrainOutcome {
        checkpoint: ck,
        log,
        baseline_loss: baseline,
        final_loss,
    })
}

struct StageCtx<'a> {
    stage: Stage,
    rig: &'a ClothRig,
    poses: &'a [&'a Pose],
    targets: &'a [Vec<Vec3>],
    cfg: &'a TrainConfig,
}

impl StageCtx<'_> {
    /// Returns the epoch's mean per-vertex distance.
    fn run_epoch(&self, ck: &mut Checkpoint, order: &[usize], epoch: usize) -> Result<f64> {
        let idx = stage_indices(&ck.model, self.stage);
        let n = self.rig.cloth_vertices() as f64;
        let mut total = 0.0;
        for (step, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let scale = 1.0 / (batch.len() as f64 * n);
            let model = &ck.model;
            let one = |&s: &usize| -> Result<(f64, Vec<Tensor>)> {
                let mut tape = Tape::new();
                let p = model.params_on_tape(&mut tape, |g| self.stage.trains(g));
                let pred = model.forward_on_tape(&mut tape, &p, self.rig, self.poses[s], self.cfg.streams(self.stage))?;
                let l = distance_sum_on_tape(&mut tape, pred, &self.targets[s], scale)?;
                let grads = tape.backward(l)?;
                Ok((tape.value(l).data()[0], idx.iter().map(|&i| grads.wrt(p[i])).collect()))
            };
            #[cfg(feature = "parallel")]
            let results: Vec<Result<(f64, Vec<Tensor>)>> = {
                use rayon::prelude::*;
                batch.par_iter().map(one).collect()
            };
            #[cfg(not(feature = "parallel"))]
            let results: Vec<Result<(f64, Vec<Tensor>)>> = batch.iter().map(one).collect();

            let mut sum: Option<Vec<Tensor>> = None;
            for r in results {
                let (l, g) = r.map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Diverged {
                        stage: self.stage.label(),
                        epoch,
                        step,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;
                total += l * batch.len() as f64;
                sum = Some(match sum {
                    None => g,
                    Some(mut acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                                *x += y;
                            }
                        }
                        acc
                    }
                });
            }
            let grads = sum.unwrap_or_default();
            let mut params: Vec<Tensor> = idx.iter().map(|&i| ck.model.params.tensors()[i].clone()).collect();
            let st = match self.stage {
                Stage::A => &mut ck.adam_a,
                Stage::B => &mut ck.adam_b,
            };
            adam_step(&mut params, &grads, st, self.cfg.lr)?;
            if params.iter().any(|t| !t.is_finite()) {
                return Err(Error::Diverged {
                    stage: self.stage.label(),
                    epoch,
                    step,
                    loss: f64::NAN,
                });
            }
            let store = ck.model.params.tensors_mut();
            for (k, &i) in idx.iter().enumerate() {
                store[i] = core::mem::replace(&mut params[k], Tensor::scalar(0.0));
            }
        }
        Ok(total / order.len() as f64)
    }
}
