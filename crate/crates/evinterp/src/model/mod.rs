//! The interpolation function: flow estimated from directional event
//! tensors, differentiable backward warping, a shared refinement stage that
//! emits residual flow plus visibility, and a visibility-weighted blend.
//!
//! Everything model-facing runs on a [`Graph`] so one backward sweep covers
//! flow estimation, warping, refinement, and the blend. Array-level wrappers
//! ([`synthesize`], [`InterpolationModel::interpolate_frames`]) build a
//! throwaway graph internally for callers that only want pictures.

use ndarray::{Array3, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::autodiff::checkpoint::{load_checkpoint, save_checkpoint};
use crate::autodiff::nn::EncoderDecoder;
use crate::autodiff::{Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::event::{Direction, Event, EventStream, EventTensor};

/// Below this total visibility weight the blend denominator is considered
/// degenerate and the output falls back to the plain time-weighted average.
pub const Z_EPSILON: f64 = 1e-6;

/// Model wiring choices benchmarked by the ablation harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// Two per-direction flow estimators over sub-window event tensors.
    Full,
    /// One estimator serves both directions (parameters shared).
    SharedFlow,
    /// One whole-window flow, scaled by temporal proportion.
    LinearMotion,
    /// Flow estimated jointly from both frames plus the whole-window tensor.
    FramesOnly,
}

impl VariantKind {
    pub fn all() -> [VariantKind; 4] {
        [
            VariantKind::Full,
            VariantKind::LinearMotion,
            VariantKind::SharedFlow,
            VariantKind::FramesOnly,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Full => "full",
            VariantKind::SharedFlow => "shared_flow",
            VariantKind::LinearMotion => "linear_motion",
            VariantKind::FramesOnly => "frames_only",
        }
    }
}

impl std::fmt::Display for VariantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<VariantKind> {
        match s {
            "full" => Ok(VariantKind::Full),
            "shared_flow" => Ok(VariantKind::SharedFlow),
            "linear_motion" => Ok(VariantKind::LinearMotion),
            "frames_only" => Ok(VariantKind::FramesOnly),
            other => Err(Error::invalid(format!(
                "unknown variant {other:?} (expected full, shared_flow, linear_motion, or frames_only)"
            ))),
        }
    }
}

/// Architecture hyperparameters. The defaults describe the reference
/// configuration; the desk preset shrinks them so training fits in minutes
/// on one core.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: VariantKind,
    /// 1 for grayscale, 3 for RGB.
    pub frame_channels: usize,
    /// Encoder-decoder depth; each scale past the first halves resolution.
    pub scales: usize,
    /// Channel width at full resolution; doubles per scale.
    pub base_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: VariantKind::Full,
            frame_channels: 1,
            scales: 4,
            base_width: 32,
        }
    }
}

impl ModelConfig {
    pub fn widths(&self) -> Vec<usize> {
        (0..self.scales).map(|s| self.base_width << s).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_channels != 1 && self.frame_channels != 3 {
            return Err(Error::invalid(format!(
                "frame_channels must be 1 or 3, got {}",
                self.frame_channels
            )));
        }
        if self.scales == 0 || self.scales > 6 {
            return Err(Error::invalid(format!(
                "scales must be in 1..=6, got {}",
                self.scales
            )));
        }
        if self.base_width == 0 {
            return Err(Error::invalid("base_width must be positive"));
        }
        Ok(())
    }

    /// Input resolutions must be divisible by this.
    pub fn resolution_divisor(&self) -> usize {
        1 << (self.scales - 1)
    }
}

/// Dense displacement field in pixels: channel 0 horizontal, channel 1
/// vertical. `from_time` is when the field's pixel grid lives; `to_time` is
/// the instant it points at.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub data: Array3<f64>,
    pub from_time: f64,
    pub to_time: f64,
}

impl FlowField {
    pub fn new(data: Array3<f64>, from_time: f64, to_time: f64) -> Result<FlowField> {
        if data.shape()[0] != 2 {
            return Err(Error::invalid(format!(
                "flow field needs 2 channels, got {}",
                data.shape()[0]
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("flow field contains non-finite values"));
        }
        Ok(FlowField {
            data,
            from_time,
            to_time,
        })
    }

    pub fn zero(height: usize, width: usize, from_time: f64, to_time: f64) -> FlowField {
        FlowField {
            data: Array3::zeros((2, height, width)),
            from_time,
            to_time,
        }
    }
}

/// Per-pixel blend weight in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityMap {
    pub data: Array3<f64>,
}

impl VisibilityMap {
    pub fn new(data: Array3<f64>) -> Result<VisibilityMap> {
        if data.shape()[0] != 1 {
            return Err(Error::invalid(format!(
                "visibility map needs 1 channel, got {}",
                data.shape()[0]
            )));
        }
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("visibility values must lie in [0, 1]"));
        }
        Ok(VisibilityMap { data })
    }

    pub fn uniform(height: usize, width: usize, value: f64) -> Result<VisibilityMap> {
        VisibilityMap::new(Array3::from_elem((1, height, width), value))
    }
}

/// Concrete synthesis record: the blended frame plus every intermediate a
/// caller might plot or score. Index 0 refers to the first input frame,
/// 1 to the second.
#[derive(Clone, Debug)]
pub struct SynthesisResult {
    pub frame: Array3<f64>,
    pub flow0: FlowField,
    pub flow1: FlowField,
    pub visibility0: VisibilityMap,
    pub visibility1: VisibilityMap,
    pub warped0: Array3<f64>,
    pub warped1: Array3<f64>,
    /// Blend denominator, (1, H, W); nonnegative by construction.
    pub z: Array3<f64>,
}

/// Graph handles for one synthesis pass; keeps everything differentiable
/// for the trainer. `a` is the first frame argument, `b` the second.
#[derive(Clone, Copy, Debug)]
pub struct Synthesized {
    pub frame: Tensor,
    pub flow_a: Tensor,
    pub flow_b: Tensor,
    pub vis_a: Tensor,
    pub vis_b: Tensor,
    pub warped_a: Tensor,
    pub warped_b: Tensor,
    pub z: Tensor,
    pub time_a: f64,
    pub time_b: f64,
    pub target_time: f64,
}

impl Synthesized {
    /// Copies the graph values out into a validated [`SynthesisResult`].
    pub fn materialize(&self, g: &Graph) -> Result<SynthesisResult> {
        Ok(SynthesisResult {
            frame: to3(g.value(self.frame))?,
            flow0: FlowField::new(to3(g.value(self.flow_a))?, self.target_time, self.time_a)?,
            flow1: FlowField::new(to3(g.value(self.flow_b))?, self.target_time, self.time_b)?,
            visibility0: VisibilityMap::new(to3(g.value(self.vis_a))?)?,
            visibility1: VisibilityMap::new(to3(g.value(self.vis_b))?)?,
            warped0: to3(g.value(self.warped_a))?,
            warped1: to3(g.value(self.warped_b))?,
            z: to3(g.value(self.z))?,
        })
    }
}

fn to3(v: ArrayD<f64>) -> Result<Array3<f64>> {
    v.into_dimensionality::<ndarray::Ix3>()
        .map_err(|_| Error::invalid("expected a rank-3 tensor"))
}

fn dyn3(a: &Array3<f64>) -> ArrayD<f64> {
    a.clone().into_dyn()
}

/// Visibility-weighted blend of two warped frames with scalar time weights.
/// Wherever the summed weight falls below [`Z_EPSILON`] the output switches
/// to the unweighted time blend; the select mask is a constant, so gradients
/// flow through whichever branch is active per pixel.
fn blend(
    g: &Graph,
    warped_a: Tensor,
    warped_b: Tensor,
    vis_a: Tensor,
    vis_b: Tensor,
    weight_a: f64,
    weight_b: f64,
) -> (Tensor, Tensor) {
    let za = g.scale(vis_a, weight_a);
    let zb = g.scale(vis_b, weight_b);
    let z = g.add(za, zb);
    let num = g.add(g.mul(za, warped_a), g.mul(zb, warped_b));
    let weighted = g.div(num, g.max_scalar(z, Z_EPSILON));

    let zv = g.value(z);
    if zv.iter().all(|&v| v >= Z_EPSILON) {
        return (weighted, z);
    }
    let s = weight_a + weight_b;
    let fallback = g.add(
        g.scale(warped_a, weight_a / s),
        g.scale(warped_b, weight_b / s),
    );
    let mask = g.constant(zv.mapv(|v| if v >= Z_EPSILON { 1.0 } else { 0.0 }));
    let inv = g.constant(zv.mapv(|v| if v >= Z_EPSILON { 0.0 } else { 1.0 }));
    let frame = g.add(g.mul(mask, weighted), g.mul(inv, fallback));
    (frame, z)
}

/// Array-level blend for a target strictly inside (t0, t1):
/// frame = [(t1-t)*V0*warped0 + (t-t0)*V1*warped1] / Z with
/// Z = (t1-t)*V0 + (t-t0)*V1.
///
/// The returned flow fields are zero placeholders; callers that came through
/// the model get real ones from [`Synthesized::materialize`].
pub fn synthesize(
    warped0: &Array3<f64>,
    warped1: &Array3<f64>,
    vis0: &VisibilityMap,
    vis1: &VisibilityMap,
    t0: f64,
    t: f64,
    t1: f64,
) -> Result<SynthesisResult> {
    if !(t0 < t && t < t1) {
        return Err(Error::invalid(format!(
            "target time {t} must lie strictly inside ({t0}, {t1})"
        )));
    }
    if warped0.shape() != warped1.shape() {
        return Err(Error::invalid(format!(
            "warped frame shapes differ: {:?} vs {:?}",
            warped0.shape(),
            warped1.shape()
        )));
    }
    let (h, w) = (warped0.shape()[1], warped0.shape()[2]);
    if vis0.data.shape() != [1, h, w] || vis1.data.shape() != [1, h, w] {
        return Err(Error::invalid("visibility resolution does not match frames"));
    }

    let g = Graph::new();
    let wa = g.constant(dyn3(warped0));
    let wb = g.constant(dyn3(warped1));
    let va = g.constant(dyn3(&vis0.data));
    let vb = g.constant(dyn3(&vis1.data));
    let (frame, z) = blend(&g, wa, wb, va, vb, t1 - t, t - t0);
    Ok(SynthesisResult {
        frame: to3(g.value(frame))?,
        flow0: FlowField::zero(h, w, t, t0),
        flow1: FlowField::zero(h, w, t, t1),
        visibility0: vis0.clone(),
        visibility1: vis1.clone(),
        warped0: warped0.clone(),
        warped1: warped1.clone(),
        z: to3(g.value(z))?,
    })
}

/// Metadata stored alongside parameters in a model checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
}

/// The interpolation model: per-variant flow estimation plus a refinement
/// network shared by both time directions.
#[derive(Clone, Debug)]
pub struct InterpolationModel {
    config: ModelConfig,
    /// Primary flow net. Full: forward-stream estimator; SharedFlow: the
    /// one shared estimator; LinearMotion: whole-window estimator;
    /// FramesOnly: joint frames+events estimator (4 output channels).
    flow_a: EncoderDecoder,
    /// Reversed-stream estimator; present only for the Full variant.
    flow_b: Option<EncoderDecoder>,
    refine_net: EncoderDecoder,
}

impl InterpolationModel {
    /// Initializes parameters into `store`. Flow and refinement heads start
    /// at zero, so the untrained model degenerates to the time blend of its
    /// two (unwarped) inputs with uniform visibility 1/2.
    pub fn init(store: &mut ParamStore, seed: u64, config: &ModelConfig) -> Result<InterpolationModel> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.widths();
        let c = config.frame_channels;
        let (flow_a, flow_b) = match config.variant {
            VariantKind::Full => (
                EncoderDecoder::init(store, &mut rng, "flow_fwd", 4, 2, &w),
                Some(EncoderDecoder::init(store, &mut rng, "flow_bwd", 4, 2, &w)),
            ),
            VariantKind::SharedFlow => {
                (EncoderDecoder::init(store, &mut rng, "flow_shared", 4, 2, &w), None)
            }
            VariantKind::LinearMotion => {
                (EncoderDecoder::init(store, &mut rng, "flow_window", 4, 2, &w), None)
            }
            VariantKind::FramesOnly => (
                EncoderDecoder::init(store, &mut rng, "flow_frames", 2 * c + 4, 4, &w),
                None,
            ),
        };
        // Input: warped frame, source frame, flow, event tensor.
        let refine_net = EncoderDecoder::init(store, &mut rng, "refine", 2 * c + 2 + 4, 3, &w);
        Ok(InterpolationModel {
            config: config.clone(),
            flow_a,
            flow_b,
            refine_net,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Flow from an event tensor. `direction` names the estimator being
    /// asked for; a tensor tagged with the other direction is rejected, so
    /// reversed windows can never leak into the forward estimator.
    pub fn estimate_flow(
        &self,
        g: &Graph,
        store: &ParamStore,
        tensor: &EventTensor,
        direction: Direction,
    ) -> Result<Tensor> {
        if tensor.direction() != direction {
            return Err(Error::invalid(format!(
                "event tensor is tagged {:?} but was routed to the {:?} estimator",
                tensor.direction(),
                direction
            )));
        }
        let net = match (self.config.variant, direction) {
            (VariantKind::Full, Direction::Forward) => &self.flow_a,
            (VariantKind::Full, Direction::Reversed) => {
                self.flow_b.as_ref().expect("full variant has a reversed-stream net")
            }
            (VariantKind::SharedFlow, _) => &self.flow_a,
            (VariantKind::LinearMotion, Direction::Forward) => &self.flow_a,
            (VariantKind::LinearMotion, Direction::Reversed) => {
                return Err(Error::invalid(
                    "the linear-motion variant estimates one whole-window flow; it has no reversed-stream estimator",
                ))
            }
            (VariantKind::FramesOnly, _) => {
                return Err(Error::invalid(
                    "the frames-plus-events variant estimates flow jointly from frames; use reconstruct",
                ))
            }
        };
        net.check_resolution(tensor.height(), tensor.width())?;
        Ok(net.apply(g, store, g.constant(tensor.data.clone().into_dyn())))
    }

    /// Refinement: concatenates (warped, frame, flow, event tensor) in that
    /// order and returns the residual flow and the squashed visibility.
    /// One parameter set serves both time directions.
    pub fn refine(
        &self,
        g: &Graph,
        store: &ParamStore,
        warped: Tensor,
        frame: Tensor,
        flow: Tensor,
        tensor: &EventTensor,
    ) -> Result<(Tensor, Tensor)> {
        let ws = g.shape(warped);
        let fs = g.shape(frame);
        let ls = g.shape(flow);
        let c = self.config.frame_channels;
        let (h, w) = (tensor.height(), tensor.width());
        if ws != [c, h, w] || fs != [c, h, w] || ls != [2, h, w] {
            return Err(Error::invalid(format!(
                "refine inputs disagree: warped {ws:?}, frame {fs:?}, flow {ls:?}, events {h}x{w}"
            )));
        }
        self.refine_net.check_resolution(h, w)?;
        let input = g.concat(&[warped, frame, flow, g.constant(tensor.data.clone().into_dyn())]);
        let out = self.refine_net.apply(g, store, input);
        let delta = g.slice_channels(out, 0, 2);
        let vis = g.sigmoid(g.slice_channels(out, 2, 3));
        Ok((delta, vis))
    }

    /// Synthesizes the frame at `target_time` from two frames at `time_a`
    /// and `time_b` plus the event stream covering all three instants.
    /// This is the general form used both for interpolation (target inside)
    /// and for the trainer's reconstruction passes (target outside).
    ///
    /// Event windows are sliced per frame: the slice between target and
    /// frame time, reversed when the target lies after the frame. Blend
    /// weights generalize the interior case: each frame is weighted by the
    /// target's distance to the *other* frame.
    pub fn reconstruct(
        &self,
        g: &Graph,
        store: &ParamStore,
        frame_a: Tensor,
        time_a: f64,
        frame_b: Tensor,
        time_b: f64,
        events: &EventStream,
        target_time: f64,
    ) -> Result<Synthesized> {
        if events.direction() != Direction::Forward {
            return Err(Error::invalid("reconstruct needs a forward event stream"));
        }
        let (w0, w1) = events.window();
        for tt in [time_a, time_b, target_time] {
            if !tt.is_finite() || tt < w0 || tt > w1 {
                return Err(Error::invalid(format!(
                    "time {tt} outside the event window [{w0}, {w1}]"
                )));
            }
        }
        if time_a == time_b || target_time == time_a || target_time == time_b {
            return Err(Error::invalid(
                "frame and target times must be pairwise distinct",
            ));
        }
        let c = self.config.frame_channels;
        let (h, w) = (events.height() as usize, events.width() as usize);
        if g.shape(frame_a) != [c, h, w] || g.shape(frame_b) != [c, h, w] {
            return Err(Error::invalid(format!(
                "frames must be ({c}, {h}, {w}) to match the event stream; got {:?} and {:?}",
                g.shape(frame_a),
                g.shape(frame_b)
            )));
        }
        self.refine_net.check_resolution(h, w)?;

        let ten_a = directional_tensor(events, target_time, time_a)?;
        let ten_b = directional_tensor(events, target_time, time_b)?;

        let (flow_a, flow_b, ref_ten_a, ref_ten_b) = match self.config.variant {
            VariantKind::Full | VariantKind::SharedFlow => {
                let fa = self.estimate_flow(g, store, &ten_a, ten_a.direction())?;
                let fb = self.estimate_flow(g, store, &ten_b, ten_b.direction())?;
                (fa, fb, ten_a, ten_b)
            }
            VariantKind::LinearMotion => {
                let (lo, hi) = (time_a.min(time_b), time_a.max(time_b));
                let whole = events.slice(lo, hi)?.tensorize();
                let d = self.estimate_flow(g, store, &whole, Direction::Forward)?;
                let span = hi - lo;
                // d is the displacement across [lo, hi]; under constant
                // velocity the flow toward a frame scales with the signed
                // time gap.
                let fa = g.scale(d, (time_a - target_time) / span);
                let fb = g.scale(d, (time_b - target_time) / span);
                (fa, fb, whole.clone(), whole)
            }
            VariantKind::FramesOnly => {
                let a_first = time_a < time_b;
                let (lo, hi) = if a_first { (time_a, time_b) } else { (time_b, time_a) };
                let (frame_lo, frame_hi) = if a_first { (frame_a, frame_b) } else { (frame_b, frame_a) };
                let whole = events.slice(lo, hi)?.tensorize();
                let input = g.concat(&[frame_lo, frame_hi, g.constant(whole.data.clone().into_dyn())]);
                let out = self.flow_a.apply(g, store, input);
                let ahead = g.slice_channels(out, 0, 2); // displacement lo -> hi
                let back = g.slice_channels(out, 2, 4); // displacement hi -> lo
                // Quadratic combination of the two whole-window flows into
                // flows anchored at the target time.
                let tau = (target_time - lo) / (hi - lo);
                let to_lo = g.add(g.scale(ahead, -(1.0 - tau) * tau), g.scale(back, tau * tau));
                let to_hi = g.add(
                    g.scale(ahead, (1.0 - tau) * (1.0 - tau)),
                    g.scale(back, -tau * (1.0 - tau)),
                );
                let (fa, fb) = if a_first { (to_lo, to_hi) } else { (to_hi, to_lo) };
                (fa, fb, whole.clone(), whole)
            }
        };

        let coarse_a = g.warp(frame_a, flow_a);
        let coarse_b = g.warp(frame_b, flow_b);
        let (delta_a, vis_a) = self.refine(g, store, coarse_a, frame_a, flow_a, &ref_ten_a)?;
        let (delta_b, vis_b) = self.refine(g, store, coarse_b, frame_b, flow_b, &ref_ten_b)?;
        let refined_a = g.add(flow_a, delta_a);
        let refined_b = g.add(flow_b, delta_b);
        let warped_a = g.warp(frame_a, refined_a);
        let warped_b = g.warp(frame_b, refined_b);

        let weight_a = (target_time - time_b).abs();
        let weight_b = (target_time - time_a).abs();
        let (frame, z) = blend(g, warped_a, warped_b, vis_a, vis_b, weight_a, weight_b);

        Ok(Synthesized {
            frame,
            flow_a: refined_a,
            flow_b: refined_b,
            vis_a,
            vis_b,
            warped_a,
            warped_b,
            z,
            time_a,
            time_b,
            target_time,
        })
    }

    /// Interpolates the frame at `t` inside `(t0, t1)` from directional
    /// event slices: `toward_start` must be the reversed slice over
    /// `[t0, t]`, `toward_end` the forward slice over `[t, t1]`.
    #[allow(clippy::too_many_arguments)]
    pub fn interpolate(
        &self,
        g: &Graph,
        store: &ParamStore,
        frame0: &Array3<f64>,
        frame1: &Array3<f64>,
        toward_start: &EventStream,
        toward_end: &EventStream,
        t0: f64,
        t: f64,
        t1: f64,
    ) -> Result<Synthesized> {
        if !(t0 < t && t < t1) {
            return Err(Error::invalid(format!(
                "target time {t} must lie strictly inside ({t0}, {t1})"
            )));
        }
        if toward_start.direction() != Direction::Reversed {
            return Err(Error::invalid(
                "the stream toward the start frame must be reversed",
            ));
        }
        if toward_end.direction() != Direction::Forward {
            return Err(Error::invalid("the stream toward the end frame must be forward"));
        }
        if toward_start.window() != (t0, t) {
            return Err(Error::invalid(format!(
                "reversed stream window {:?} does not cover [{t0}, {t}]",
                toward_start.window()
            )));
        }
        if toward_end.window() != (t, t1) {
            return Err(Error::invalid(format!(
                "forward stream window {:?} does not cover [{t}, {t1}]",
                toward_end.window()
            )));
        }
        if toward_start.width() != toward_end.width()
            || toward_start.height() != toward_end.height()
        {
            return Err(Error::invalid("event stream resolutions disagree"));
        }

        let merged = merge_slices(toward_start, toward_end)?;
        self.reconstruct(
            g,
            store,
            g.constant(dyn3(frame0)),
            t0,
            g.constant(dyn3(frame1)),
            t1,
            &merged,
            t,
        )
    }

    /// Array-in, array-out interpolation on a private graph.
    #[allow(clippy::too_many_arguments)]
    pub fn interpolate_frames(
        &self,
        store: &ParamStore,
        frame0: &Array3<f64>,
        frame1: &Array3<f64>,
        toward_start: &EventStream,
        toward_end: &EventStream,
        t0: f64,
        t: f64,
        t1: f64,
    ) -> Result<SynthesisResult> {
        let g = Graph::new();
        let out = self.interpolate(
            &g,
            store,
            frame0,
            frame1,
            toward_start,
            toward_end,
            t0,
            t,
            t1,
        )?;
        out.materialize(&g)
    }

    /// Writes parameters (plus any extra arrays, e.g. optimizer state) and
    /// metadata to one checkpoint file.
    pub fn save(
        &self,
        path: &Path,
        store: &ParamStore,
        meta: &ModelMeta,
        extra: &[(String, ArrayD<f64>)],
    ) -> Result<()> {
        let mut arrays: Vec<(String, ArrayD<f64>)> = store
            .iter()
            .map(|(name, value)| (name.to_string(), value.clone()))
            .collect();
        arrays.extend(extra.iter().cloned());
        save_checkpoint(path, meta, &arrays)
    }

    /// Rebuilds a model from a checkpoint. Returns the metadata, the model,
    /// its parameter store, and any extra arrays the checkpoint carried.
    #[allow(clippy::type_complexity)]
    pub fn load(
        path: &Path,
    ) -> Result<(ModelMeta, InterpolationModel, ParamStore, Vec<(String, ArrayD<f64>)>)> {
        let (meta, arrays): (ModelMeta, _) = load_checkpoint(path)?;
        let mut store = ParamStore::new();
        let model = InterpolationModel::init(&mut store, meta.seed, &meta.config)?;
        let mut extra = Vec::new();
        for (name, value) in arrays {
            if store.id(&name).is_some() {
                store.load(&name, value)?;
            } else {
                extra.push((name, value));
            }
        }
        Ok((meta, model, store, extra))
    }
}

/// Event slice between a target instant and a frame instant, reversed when
/// the target lies after the frame (flow then points back in time).
fn directional_tensor(events: &EventStream, target: f64, frame_time: f64) -> Result<EventTensor> {
    let slice = if target > frame_time {
        events.slice(frame_time, target)?.reversed()
    } else {
        events.slice(target, frame_time)?
    };
    Ok(slice.tensorize())
}

/// Rejoins the two directional slices of one window into a forward stream.
/// Events exactly at the shared boundary appear in both closed slices;
/// duplicates are dropped once.
fn merge_slices(toward_start: &EventStream, toward_end: &EventStream) -> Result<EventStream> {
    let head = toward_start.reversed(); // forward over [t0, t]
    let boundary = head.t_end();
    let mut all: Vec<Event> = head.events().to_vec();
    for e in toward_end.events() {
        let dup = e.t == boundary
            && all
                .iter()
                .rev()
                .take_while(|h| h.t == boundary)
                .any(|h| h == e);
        if !dup {
            all.push(*e);
        }
    }
    EventStream::new(
        head.width(),
        head.height(),
        head.t_start(),
        toward_end.t_end(),
        Direction::Forward,
        all,
    )
}
