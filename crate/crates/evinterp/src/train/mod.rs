//! Unsupervised training. Each step interpolates a middle frame, then
//! re-applies the model to push that frame back onto both inputs; the loss
//! compares only against the two frames we already have, so held-out
//! intermediates never influence a gradient.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{s, Array3, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{normal, Adam, Graph, ParamGrads, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::event::{Event, EventStream};
use crate::eval::psnr;
use crate::model::{InterpolationModel, ModelMeta, Synthesized};
use crate::scene::InterpolationSample;

/// Coefficients of the four loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_w: f64,
    pub lambda_s: f64,
    pub lambda_p: f64,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights {
            lambda_c: 1.0,
            lambda_w: 0.5,
            lambda_s: 1.0,
            lambda_p: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_c, self.lambda_w, self.lambda_s, self.lambda_p];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        if self.lambda_c <= 0.0 {
            return Err(Error::invalid(
                "the reconstruction weight must be positive or nothing anchors training",
            ));
        }
        Ok(())
    }
}

/// Per-step loss components. `total` is the lambda-weighted sum, evaluated
/// in the fixed order cycle, warp, smooth, percep so it reproduces bit-for-
/// bit from the components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub cycle: f64,
    pub warp: f64,
    pub smooth: f64,
    pub percep: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// The weighted sum as `total` stores it. Left-associated, same op
    /// order as the graph, so equality is exact.
    pub fn weighted_total(w: &LossWeights, cycle: f64, warp: f64, smooth: f64, percep: f64) -> f64 {
        w.lambda_c * cycle + w.lambda_w * warp + w.lambda_s * smooth + w.lambda_p * percep
    }

    pub fn is_finite(&self) -> bool {
        [self.cycle, self.warp, self.smooth, self.percep, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Training hyperparameters. Deserializes with per-field fallbacks to the
/// desk preset, so partial config files work.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Square crop side; must be a multiple of the model's resolution
    /// divisor and no larger than the frames.
    pub patch_size: usize,
    pub lr: f64,
    /// Multiplier applied to the learning rate every `lr_decay_every`
    /// epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
    /// Extra numbered checkpoints every n epochs; 0 keeps only the rolling
    /// latest.
    pub checkpoint_every: usize,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Minutes-scale preset for a single desk core: about 0.27 s per step
    /// at the companion model geometry (3 scales, base width 8, 32 px
    /// patches), so a full run stays under three minutes per variant.
    pub fn desk() -> TrainConfig {
        TrainConfig {
            epochs: 60,
            batch_size: 2,
            patch_size: 32,
            lr: 2e-3,
            lr_decay: 0.1,
            lr_decay_every: 25,
            seed: 7,
            checkpoint_every: 20,
            weights: LossWeights::default(),
        }
    }

    /// The published schedule: 500 epochs, step decay by 0.1 every 200.
    pub fn paper() -> TrainConfig {
        TrainConfig {
            epochs: 500,
            batch_size: 4,
            patch_size: 128,
            lr: 1e-4,
            lr_decay: 0.1,
            lr_decay_every: 200,
            seed: 7,
            checkpoint_every: 50,
            weights: LossWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.patch_size == 0 {
            return Err(Error::invalid("patch_size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("lr must be positive"));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return Err(Error::invalid("lr_decay must be positive"));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::invalid("lr_decay_every must be positive"));
        }
        self.weights.validate()
    }

    /// Step-decayed learning rate for a zero-based epoch index.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// What a training step is allowed to see: the two boundary frames, the
/// event stream between them, and the timestamps of skipped positions.
/// Ground-truth intermediate frames are stripped at construction, so the
/// optimizer cannot read them even by accident.
#[derive(Clone, Debug)]
pub struct TrainView {
    pub t0: f64,
    pub t1: f64,
    pub frame0: Array3<f64>,
    pub frame1: Array3<f64>,
    pub gt_times: Vec<f64>,
    pub events: EventStream,
}

impl TrainView {
    pub fn of(sample: &InterpolationSample) -> TrainView {
        TrainView {
            t0: sample.t0,
            t1: sample.t1,
            frame0: sample.frame0.clone(),
            frame1: sample.frame1.clone(),
            gt_times: sample.gt_times.clone(),
            events: sample.events.clone(),
        }
    }

    /// Spatial crop to a `size`-square window at (x0, y0): frames are
    /// sliced, events outside are dropped and the rest rebased. Times are
    /// untouched.
    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> Result<TrainView> {
        let (_, h, w) = self.frame0.dim();
        if x0 + size > w || y0 + size > h {
            return Err(Error::invalid(format!(
                "crop {size} at ({x0}, {y0}) exceeds the {w}x{h} frame"
            )));
        }
        let cut = |f: &Array3<f64>| f.slice(s![.., y0..y0 + size, x0..x0 + size]).to_owned();
        let kept: Vec<Event> = self
            .events
            .events()
            .iter()
            .filter(|e| {
                (e.x as usize) >= x0
                    && (e.x as usize) < x0 + size
                    && (e.y as usize) >= y0
                    && (e.y as usize) < y0 + size
            })
            .map(|e| Event::new(e.x - x0 as u16, e.y - y0 as u16, e.t, e.p))
            .collect();
        let (ws, we) = self.events.window();
        Ok(TrainView {
            t0: self.t0,
            t1: self.t1,
            frame0: cut(&self.frame0),
            frame1: cut(&self.frame1),
            gt_times: self.gt_times.clone(),
            events: EventStream::new(size as u16, size as u16, ws, we, self.events.direction(), kept)?,
        })
    }
}

/// Fixed random convolutional feature extractor for the feature-space loss.
/// Its weights live in the graph as constants, never in a parameter store,
/// so they cannot collide with model parameters or receive updates.
#[derive(Clone, Debug)]
pub struct PerceptualNet {
    layers: Vec<(ArrayD<f64>, ArrayD<f64>, usize)>,
}

const PERCEP_SEED: u64 = 0x70657263;
const PERCEP_LEAK: f64 = 0.1;

impl PerceptualNet {
    /// Three 3x3 conv layers (c -> 8 -> 16 -> 16, strides 1, 2, 2) seeded
    /// by a constant, so every trainer instance extracts identical features.
    pub fn new(in_channels: usize) -> PerceptualNet {
        let mut rng = ChaCha8Rng::seed_from_u64(PERCEP_SEED);
        let plan = [(in_channels, 8, 1), (8, 16, 2), (16, 16, 2)];
        let layers = plan
            .iter()
            .map(|&(ic, oc, stride)| {
                let std = (2.0 / (ic * 9) as f64).sqrt();
                let w = ArrayD::from_shape_fn(IxDyn(&[oc, ic, 3, 3]), |_| normal(&mut rng) * std);
                (w, ArrayD::zeros(IxDyn(&[oc])), stride)
            })
            .collect();
        PerceptualNet { layers }
    }

    pub fn features(&self, g: &Graph, x: Tensor) -> Tensor {
        let mut cur = x;
        for (w, b, stride) in &self.layers {
            let conv = g.conv2d(cur, g.constant(w.clone()), g.constant(b.clone()), *stride);
            cur = g.leaky_relu(conv, PERCEP_LEAK);
        }
        cur
    }
}

/// Mean squared distance between feature maps of `a` and `b`.
pub fn percep_loss(g: &Graph, net: &PerceptualNet, a: Tensor, b: Tensor) -> Tensor {
    let d = g.sub(net.features(g, a), net.features(g, b));
    g.mean(g.mul(d, d))
}

/// Total variation of flow fields: for each field the mean absolute first
/// difference along x plus the same along y, summed over fields.
pub fn smooth_loss(g: &Graph, flows: &[Tensor]) -> Tensor {
    let mut acc = None;
    for &f in flows {
        let tv = g.add(g.mean_abs(g.diff_x(f)), g.mean_abs(g.diff_y(f)));
        acc = Some(match acc {
            None => tv,
            Some(a) => g.add(a, tv),
        });
    }
    acc.expect("smooth_loss needs at least one flow")
}

/// Sum of mean L1 distances over (prediction, target) pairs.
pub fn warp_loss(g: &Graph, pairs: &[(Tensor, Tensor)]) -> Tensor {
    let mut acc = None;
    for &(p, t) in pairs {
        let term = g.mean_abs(g.sub(p, t));
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term),
        });
    }
    acc.expect("warp_loss needs at least one pair")
}

/// Mean L1 distance of each reconstruction to its frame, summed; the
/// t0 term comes first.
pub fn cycle_loss(g: &Graph, rec0: Tensor, frame0: Tensor, rec1: Tensor, frame1: Tensor) -> Tensor {
    g.add(g.mean_abs(g.sub(rec0, frame0)), g.mean_abs(g.sub(rec1, frame1)))
}

/// One unsupervised step on a sample view: interpolate the frame at `t`,
/// reconstruct both inputs from it, and differentiate the weighted loss.
///
/// Stream directions follow from each reconstruction's target: rebuilding
/// the later frame reads events backward from it (reversed slices), and
/// rebuilding the earlier frame reads them forward.
pub fn cycle_step(
    model: &InterpolationModel,
    store: &ParamStore,
    percep: &PerceptualNet,
    view: &TrainView,
    t: f64,
    weights: &LossWeights,
) -> Result<(LossBreakdown, ParamGrads)> {
    weights.validate()?;
    if !(view.t0 < t && t < view.t1) {
        return Err(Error::invalid(format!(
            "intermediate time {t} must lie strictly inside ({}, {})",
            view.t0, view.t1
        )));
    }
    if view.events.window() != (view.t0, view.t1) {
        return Err(Error::invalid(format!(
            "event window {:?} does not cover [{}, {}]",
            view.events.window(),
            view.t0,
            view.t1
        )));
    }

    let g = Graph::new();
    let f0 = g.constant(view.frame0.clone().into_dyn());
    let f1 = g.constant(view.frame1.clone().into_dyn());

    let mid = model.reconstruct(&g, store, f0, view.t0, f1, view.t1, &view.events, t)?;
    // Push the interpolated frame back onto both inputs; gradients cross
    // both applications of the model.
    let rec1 = model.reconstruct(&g, store, mid.frame, t, f0, view.t0, &view.events, view.t1)?;
    let rec0 = model.reconstruct(&g, store, mid.frame, t, f1, view.t1, &view.events, view.t0)?;

    let cycle = cycle_loss(&g, rec0.frame, f0, rec1.frame, f1);
    let warp = warp_loss(
        &g,
        &[
            (rec0.warped_a, f0),
            (rec0.warped_b, f0),
            (rec1.warped_a, f1),
            (rec1.warped_b, f1),
        ],
    );
    let smooth = smooth_loss(&g, &[rec0.flow_a, rec0.flow_b, rec1.flow_a, rec1.flow_b]);
    let percep_term = g.add(
        percep_loss(&g, percep, rec0.frame, f0),
        percep_loss(&g, percep, rec1.frame, f1),
    );

    let total = g.add(
        g.add(
            g.add(g.scale(cycle, weights.lambda_c), g.scale(warp, weights.lambda_w)),
            g.scale(smooth, weights.lambda_s),
        ),
        g.scale(percep_term, weights.lambda_p),
    );

    let breakdown = LossBreakdown {
        cycle: g.scalar(cycle),
        warp: g.scalar(warp),
        smooth: g.scalar(smooth),
        percep: g.scalar(percep_term),
        total: g.scalar(total),
    };
    let grads = g.backward(total);
    Ok((breakdown, grads))
}

/// One finished epoch as logged to the metrics CSV. Loss columns are means
/// over the epoch's samples; `total` is recomputed from those means with
/// the configured weights so the row stays self-consistent.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub cycle: f64,
    pub warp: f64,
    pub smooth: f64,
    pub percep: f64,
    pub total: f64,
    pub val_psnr: Option<f64>,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "epoch,cycle,warp,smooth,percep,total,val_psnr,lr";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let val = match self.val_psnr {
            Some(v) => format!("{v}"),
            None => String::new(),
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, self.cycle, self.warp, self.smooth, self.percep, self.total, val, self.lr
        )
    }
}

/// Result of a training run: per-epoch records and where the rolling
/// checkpoint went (when an output directory was given).
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub checkpoint: Option<PathBuf>,
}

/// Trains in place from freshly initialized parameters. See [`train_from`]
/// for the loop contract.
pub fn train(
    model: &InterpolationModel,
    store: &mut ParamStore,
    train_set: &[InterpolationSample],
    val_set: &[InterpolationSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    train_from(model, store, train_set, val_set, cfg, out_dir, 0, None)
}

/// Continues a run from a checkpoint written by [`train`]. The seed must
/// match the checkpoint's: epochs draw their randomness from per-epoch
/// streams of that seed, which is what makes the resumed trajectory
/// bit-identical to an uninterrupted one.
pub fn resume_training(
    checkpoint: &Path,
    train_set: &[InterpolationSample],
    val_set: &[InterpolationSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(InterpolationModel, ParamStore, TrainReport)> {
    let (meta, model, mut store, extras) = InterpolationModel::load(checkpoint)?;
    if meta.seed != cfg.seed {
        return Err(Error::invalid(format!(
            "checkpoint was trained with seed {}, config says {}; resuming would fork the trajectory",
            meta.seed, cfg.seed
        )));
    }
    let step = extras
        .iter()
        .find(|(n, _)| n == "opt.step")
        .and_then(|(_, v)| v.iter().next().copied())
        .unwrap_or(0.0) as u64;
    let report = train_from(
        &model,
        &mut store,
        train_set,
        val_set,
        cfg,
        out_dir,
        meta.epoch,
        Some((extras, step)),
    )?;
    Ok((model, store, report))
}

fn check_sets(
    model: &InterpolationModel,
    train_set: &[InterpolationSample],
    cfg: &TrainConfig,
) -> Result<()> {
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let div = model.config().resolution_divisor();
    if cfg.patch_size % div != 0 {
        return Err(Error::invalid(format!(
            "patch_size {} is not a multiple of the model's resolution divisor {div}",
            cfg.patch_size
        )));
    }
    for s in train_set {
        if s.gt_times.is_empty() {
            return Err(Error::invalid(
                "a training sample has no intermediate timestamps to interpolate at",
            ));
        }
        if cfg.patch_size > s.width() || cfg.patch_size > s.height() {
            return Err(Error::invalid(format!(
                "patch_size {} exceeds the {}x{} frames",
                cfg.patch_size,
                s.width(),
                s.height()
            )));
        }
        if s.channels() != model.config().frame_channels {
            return Err(Error::invalid(format!(
                "sample has {} channels, model expects {}",
                s.channels(),
                model.config().frame_channels
            )));
        }
    }
    Ok(())
}

/// Picks a crop origin. Most crops center on a random event so batches see
/// motion; the rest are uniform so static regions stay represented.
fn choose_crop(rng: &mut ChaCha8Rng, view: &TrainView, patch: usize) -> (usize, usize) {
    let (_, h, w) = view.frame0.dim();
    if patch == w && patch == h {
        return (0, 0);
    }
    let centered: f64 = rng.gen_range(0.0..1.0);
    if centered < 0.8 && !view.events.is_empty() {
        let e = view.events.events()[rng.gen_range(0..view.events.len())];
        let x0 = (e.x as usize).saturating_sub(patch / 2).min(w - patch);
        let y0 = (e.y as usize).saturating_sub(patch / 2).min(h - patch);
        (x0, y0)
    } else {
        (rng.gen_range(0..=w - patch), rng.gen_range(0..=h - patch))
    }
}

/// Mean PSNR of the model against each validation sample's center
/// ground-truth frame. Evaluation only: nothing here touches gradients.
fn validation_psnr(
    model: &InterpolationModel,
    store: &ParamStore,
    val_set: &[InterpolationSample],
) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    for s in val_set {
        let k = s.gt_times.len();
        if k == 0 {
            continue;
        }
        let center = (k - 1) / 2;
        let Some(gt) = &s.gt_frames[center] else {
            continue;
        };
        let t = s.gt_times[center];
        let g = Graph::new();
        let f0 = g.constant(s.frame0.clone().into_dyn());
        let f1 = g.constant(s.frame1.clone().into_dyn());
        let syn: Synthesized = model.reconstruct(&g, store, f0, s.t0, f1, s.t1, &s.events, t)?;
        let result = syn.materialize(&g)?;
        scores.push(psnr(&result.frame, gt)?);
    }
    if scores.is_empty() {
        return Ok(None);
    }
    Ok(Some(scores.iter().sum::<f64>() / scores.len() as f64))
}

fn append_metrics(path: &Path, record: &EpochRecord) -> Result<()> {
    let fresh = !path.exists();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if fresh {
        writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
    }
    writeln!(file, "{}", record.csv_row()).map_err(|e| Error::io(path, e))
}

fn save_checkpoint(
    model: &InterpolationModel,
    store: &ParamStore,
    adam: &Adam,
    cfg: &TrainConfig,
    dir: &Path,
    epoch_done: usize,
) -> Result<PathBuf> {
    let meta = ModelMeta {
        config: model.config().clone(),
        seed: cfg.seed,
        epoch: epoch_done,
    };
    let mut extras = adam.export_state(store);
    extras.push((
        "opt.step".to_string(),
        ArrayD::from_elem(IxDyn(&[1]), adam.step_count() as f64),
    ));
    let latest = dir.join("model.evcp");
    model.save(&latest, store, &meta, &extras)?;
    if cfg.checkpoint_every > 0 && epoch_done % cfg.checkpoint_every == 0 {
        model.save(&dir.join(format!("epoch_{epoch_done:04}.evcp")), store, &meta, &extras)?;
    }
    Ok(latest)
}

/// The epoch loop. Every epoch reseeds its own RNG stream (seed fixed,
/// stream = epoch), so trajectories are deterministic and resumable at any
/// epoch boundary. A non-finite loss aborts with [`Error::Divergence`],
/// leaving the last completed epoch's checkpoint on disk.
#[allow(clippy::too_many_arguments)]
fn train_from(
    model: &InterpolationModel,
    store: &mut ParamStore,
    train_set: &[InterpolationSample],
    val_set: &[InterpolationSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    start_epoch: usize,
    adam_state: Option<(Vec<(String, ArrayD<f64>)>, u64)>,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_sets(model, train_set, cfg)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let percep = PerceptualNet::new(model.config().frame_channels);
    let mut adam = Adam::new(store, cfg.lr);
    if let Some((arrays, step)) = adam_state {
        adam.import_state(store, &arrays, step);
    }

    let views: Vec<TrainView> = train_set.iter().map(TrainView::of).collect();
    let mut records = Vec::new();
    let mut checkpoint = None;

    for epoch in start_epoch..cfg.epochs {
        adam.lr = cfg.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);

        let mut order: Vec<usize> = (0..views.len()).collect();
        order.shuffle(&mut rng);

        let mut sums = [0.0; 4];
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: BTreeMap<usize, ArrayD<f64>> = BTreeMap::new();
            for &idx in batch {
                let view = &views[idx];
                let (x0, y0) = choose_crop(&mut rng, view, cfg.patch_size);
                let patch = view.crop(x0, y0, cfg.patch_size)?;
                let t = patch.gt_times[rng.gen_range(0..patch.gt_times.len())];
                let (breakdown, grads) = cycle_step(model, store, &percep, &patch, t, &cfg.weights)?;
                if !breakdown.is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite loss at epoch {epoch}; the checkpoint from the last completed epoch is the last good state"
                    )));
                }
                sums[0] += breakdown.cycle;
                sums[1] += breakdown.warp;
                sums[2] += breakdown.smooth;
                sums[3] += breakdown.percep;
                seen += 1;
                for (i, grad) in grads {
                    match acc.get_mut(&i) {
                        Some(slot) => *slot += &grad,
                        None => {
                            acc.insert(i, grad);
                        }
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            let grads: ParamGrads = acc.into_iter().map(|(i, a)| (i, a * inv)).collect();
            adam.step(store, &grads);
        }

        let n = seen as f64;
        let (cycle, warp, smooth, percep_mean) =
            (sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n);
        let record = EpochRecord {
            epoch,
            cycle,
            warp,
            smooth,
            percep: percep_mean,
            total: LossBreakdown::weighted_total(&cfg.weights, cycle, warp, smooth, percep_mean),
            val_psnr: validation_psnr(model, store, val_set)?,
            lr: adam.lr,
        };
        if let Some(dir) = out_dir {
            append_metrics(&dir.join("metrics.csv"), &record)?;
            checkpoint = Some(save_checkpoint(model, store, &adam, cfg, dir, epoch + 1)?);
        }
        records.push(record);
    }

    Ok(TrainReport { records, checkpoint })
}
