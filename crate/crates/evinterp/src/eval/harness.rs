//! Skip-frame evaluation: run a model over every held-out position of a
//! dataset, score each predicted frame, and aggregate.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore};
use crate::error::{Error, Result};
use crate::eval::{interpolation_error, psnr, ssim};
use crate::event::EventStream;
use crate::model::{InterpolationModel, ModelConfig, VariantKind};
use crate::scene::Dataset;

/// Which held-out positions enter the dataset means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Every skipped position.
    Whole,
    /// Only the middle position of each sample.
    Center,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Whole => "whole",
            Aggregation::Center => "center",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Aggregation> {
        match s {
            "whole" => Ok(Aggregation::Whole),
            "center" => Ok(Aggregation::Center),
            other => Err(Error::invalid(format!(
                "unknown aggregation {other:?}; expected whole or center"
            ))),
        }
    }
}

/// Zero-based index of the middle skipped position among `k` of them; the
/// 4th of 7, and the earlier of the two middle candidates when k is even.
pub fn center_index(k: usize) -> usize {
    (k - 1) / 2
}

/// Scores for one predicted frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameScore {
    pub sample: usize,
    /// Position among the sample's skipped frames.
    pub index: usize,
    pub t: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub ie: f64,
}

/// A position that could not be scored, kept in the record instead of
/// being dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalFailure {
    pub sample: usize,
    pub index: usize,
    pub t: f64,
    pub reason: String,
}

/// Full evaluation output: per-frame rows, failures, and dataset means
/// over the aggregated positions.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub skip: usize,
    pub aggregation: Aggregation,
    pub frames: Vec<FrameScore>,
    pub failures: Vec<EvalFailure>,
    pub psnr: f64,
    pub ssim: f64,
    pub ie: f64,
}

/// Runs `model_fn` over the dataset's held-out positions (all of them for
/// whole aggregation, the center one per sample for center) and averages
/// the metrics. Prediction errors, shape mismatches, and missing ground
/// truth become [`EvalFailure`] entries; at least one position must score
/// or the whole evaluation is an error.
pub fn evaluate<F>(model_fn: F, dataset: &Dataset, aggregation: Aggregation) -> Result<EvalRecord>
where
    F: Fn(&Array3<f64>, &Array3<f64>, &EventStream, f64) -> Result<Array3<f64>>,
{
    let mut frames = Vec::new();
    let mut failures = Vec::new();
    for (si, sample) in dataset.samples.iter().enumerate() {
        let k = sample.gt_times.len();
        let chosen: Vec<usize> = match aggregation {
            Aggregation::Whole => (0..k).collect(),
            Aggregation::Center => vec![center_index(k)],
        };
        for gi in chosen {
            let t = sample.gt_times[gi];
            let fail = |reason: String| EvalFailure { sample: si, index: gi, t, reason };
            let Some(gt) = &sample.gt_frames[gi] else {
                failures.push(fail("ground truth frame missing".to_string()));
                continue;
            };
            let pred = match model_fn(&sample.frame0, &sample.frame1, &sample.events, t) {
                Ok(p) => p,
                Err(e) => {
                    failures.push(fail(format!("prediction failed: {e}")));
                    continue;
                }
            };
            if pred.shape() != gt.shape() {
                failures.push(fail(format!(
                    "prediction shape {:?} does not match ground truth {:?}",
                    pred.shape(),
                    gt.shape()
                )));
                continue;
            }
            let scored = psnr(&pred, gt)
                .and_then(|p| ssim(&pred, gt).map(|s| (p, s)))
                .and_then(|(p, s)| interpolation_error(&pred, gt).map(|i| (p, s, i)));
            match scored {
                Ok((p, s, i)) => frames.push(FrameScore {
                    sample: si,
                    index: gi,
                    t,
                    psnr: p,
                    ssim: s,
                    ie: i,
                }),
                Err(e) => failures.push(fail(format!("metrics failed: {e}"))),
            }
        }
    }
    if frames.is_empty() {
        return Err(Error::invalid(format!(
            "no position could be evaluated ({} failures)",
            failures.len()
        )));
    }
    let n = frames.len() as f64;
    Ok(EvalRecord {
        skip: dataset.skip,
        aggregation,
        psnr: frames.iter().map(|f| f.psnr).sum::<f64>() / n,
        ssim: frames.iter().map(|f| f.ssim).sum::<f64>() / n,
        ie: frames.iter().map(|f| f.ie).sum::<f64>() / n,
        frames,
        failures,
    })
}

/// A model variant ready to train and evaluate: its configuration, the
/// untrained network, and the parameter store the trainer mutates.
#[derive(Clone, Debug)]
pub struct BuiltVariant {
    pub config: ModelConfig,
    pub model: InterpolationModel,
    pub store: ParamStore,
}

/// Instantiates `kind` on top of `base` (same widths, scales, and frame
/// channels for every variant, so comparisons isolate the wiring).
pub fn build_variant(kind: VariantKind, base: &ModelConfig, seed: u64) -> Result<BuiltVariant> {
    let mut config = base.clone();
    config.variant = kind;
    let mut store = ParamStore::new();
    let model = InterpolationModel::init(&mut store, seed, &config)?;
    Ok(BuiltVariant { config, model, store })
}

impl BuiltVariant {
    /// The (frame0, frame1, events, t) -> frame closure [`evaluate`] wants.
    pub fn model_fn(
        &self,
    ) -> impl Fn(&Array3<f64>, &Array3<f64>, &EventStream, f64) -> Result<Array3<f64>> + '_ {
        move |f0, f1, events, t| {
            let (t0, t1) = events.window();
            let g = Graph::new();
            let syn = self.model.reconstruct(
                &g,
                &self.store,
                g.constant(f0.clone().into_dyn()),
                t0,
                g.constant(f1.clone().into_dyn()),
                t1,
                events,
                t,
            )?;
            Ok(syn.materialize(&g)?.frame)
        }
    }
}

/// Machine-readable evaluation summary, one per (variant, dataset) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub variant: String,
    pub skip: usize,
    pub aggregation: Aggregation,
    pub psnr: f64,
    pub ssim: f64,
    pub ie: f64,
    pub frames_evaluated: usize,
    pub failures: usize,
}

impl EvalSummary {
    pub fn of(variant: &str, record: &EvalRecord) -> EvalSummary {
        EvalSummary {
            variant: variant.to_string(),
            skip: record.skip,
            aggregation: record.aggregation,
            psnr: record.psnr,
            ssim: record.ssim,
            ie: record.ie,
            frames_evaluated: record.frames.len(),
            failures: record.failures.len(),
        }
    }
}

pub const RESULTS_HEADER: &str = "sample,intermediate,t,psnr,ssim,ie";

/// Per-frame rows plus a `mean` footer over the aggregated positions.
pub fn write_results_csv(path: &Path, record: &EvalRecord) -> Result<()> {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for f in &record.frames {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            f.sample, f.index, f.t, f.psnr, f.ssim, f.ie
        ));
    }
    out.push_str(&format!("mean,,,{},{},{}\n", record.psnr, record.ssim, record.ie));
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_summary(path: &Path, summary: &EvalSummary) -> Result<()> {
    let text = toml::to_string_pretty(summary)
        .map_err(|e| Error::format(path, format!("summary serialization failed: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<EvalSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::format(path, format!("bad summary: {e}")))
}
