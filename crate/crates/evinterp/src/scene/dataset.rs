//! Skip-k interpolation samples and their on-disk layout.
//!
//! A dataset directory holds `dataset.txt` plus one folder per sample:
//!
//! ```text
//! sample_000/
//!   in0.png  in1.png        boundary frames
//!   gt_00.png .. gt_06.png  held-out intermediates (may be absent)
//!   events.evt              events on [t0, t1]
//!   sample.txt              key-value manifest: t0, t1, times, skip, seed
//! ```
//!
//! Ground-truth frames are evaluation data. Loading tolerates their absence
//! so that a training run cannot depend on them even by accident.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::event::io::{
    read_events_binary, read_frame_png, write_events_binary, write_frame_png,
};
use crate::event::{Direction, EventStream, FrameSequence};
use crate::{Error, Result};

/// One skip-k sample: boundary frames, the event window between them, the
/// intermediate timestamps, and (when available) the held-out ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationSample {
    pub t0: f64,
    pub t1: f64,
    pub frame0: Array3<f64>,
    pub frame1: Array3<f64>,
    /// Timestamps of the skipped positions, strictly inside (t0, t1).
    pub gt_times: Vec<f64>,
    /// Ground-truth frames aligned with `gt_times`; `None` where the frame
    /// is not on disk (training never needs them).
    pub gt_frames: Vec<Option<Array3<f64>>>,
    pub events: EventStream,
}

impl InterpolationSample {
    pub fn new(
        t0: f64,
        t1: f64,
        frame0: Array3<f64>,
        frame1: Array3<f64>,
        gt_times: Vec<f64>,
        gt_frames: Vec<Option<Array3<f64>>>,
        events: EventStream,
    ) -> Result<InterpolationSample> {
        if !(t0 < t1) {
            return Err(Error::invalid(format!("sample needs t0 < t1, got [{t0}, {t1}]")));
        }
        if frame0.raw_dim() != frame1.raw_dim() {
            return Err(Error::invalid("boundary frames differ in shape"));
        }
        if gt_frames.len() != gt_times.len() {
            return Err(Error::invalid("gt_frames and gt_times lengths differ"));
        }
        for (i, &t) in gt_times.iter().enumerate() {
            if !(t0 < t && t < t1) {
                return Err(Error::invalid(format!(
                    "gt time {t} outside the open window ({t0}, {t1})"
                )));
            }
            if i > 0 && gt_times[i - 1] >= t {
                return Err(Error::invalid("gt times must increase strictly"));
            }
        }
        for f in gt_frames.iter().flatten() {
            if f.raw_dim() != frame0.raw_dim() {
                return Err(Error::invalid("gt frame shape differs from inputs"));
            }
        }
        if events.direction() != Direction::Forward {
            return Err(Error::invalid("sample events must be a forward stream"));
        }
        if events.window() != (t0, t1) {
            return Err(Error::invalid(format!(
                "event window {:?} does not match the sample window ({t0}, {t1})",
                events.window()
            )));
        }
        if (events.width() as usize, events.height() as usize)
            != (frame0.shape()[2], frame0.shape()[1])
        {
            return Err(Error::invalid("event resolution does not match the frames"));
        }
        Ok(InterpolationSample {
            t0,
            t1,
            frame0,
            frame1,
            gt_times,
            gt_frames,
            events,
        })
    }

    pub fn channels(&self) -> usize {
        self.frame0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frame0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frame0.shape()[2]
    }

    /// Ground-truth pairs that are actually present.
    pub fn gt_pairs(&self) -> impl Iterator<Item = (f64, &Array3<f64>)> {
        self.gt_times
            .iter()
            .zip(&self.gt_frames)
            .filter_map(|(&t, f)| f.as_ref().map(|fr| (t, fr)))
    }

    pub fn has_all_gt(&self) -> bool {
        self.gt_frames.iter().all(|f| f.is_some())
    }
}

/// Cuts a frame sequence into consecutive skip-k windows: frames
/// i, i+1, .., i+skip+1 become one sample with the endpoints as inputs and
/// the interior as ground truth, stepping by skip+1.
pub fn make_skip_dataset(
    frames: &FrameSequence,
    events: &EventStream,
    skip: usize,
) -> Result<Vec<InterpolationSample>> {
    if skip < 1 {
        return Err(Error::invalid("skip must be at least 1"));
    }
    if frames.len() < skip + 2 {
        return Err(Error::invalid(format!(
            "{} frames cannot form a skip-{skip} sample (need {})",
            frames.len(),
            skip + 2
        )));
    }
    let stride = skip + 1;
    let mut samples = Vec::new();
    let mut start = 0;
    while start + stride < frames.len() {
        let end = start + stride;
        let (t0, t1) = (frames.time(start), frames.time(end));
        let window = events.slice(t0, t1)?;
        let gt_times: Vec<f64> = (start + 1..end).map(|i| frames.time(i)).collect();
        let gt_frames: Vec<Option<Array3<f64>>> =
            (start + 1..end).map(|i| Some(frames.frame(i).clone())).collect();
        samples.push(InterpolationSample::new(
            t0,
            t1,
            frames.frame(start).clone(),
            frames.frame(end).clone(),
            gt_times,
            gt_frames,
            window,
        )?);
        start += stride;
    }
    Ok(samples)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub skip: usize,
    pub seed: u64,
    pub samples: Vec<InterpolationSample>,
}

impl Dataset {
    pub fn new(skip: usize, seed: u64, samples: Vec<InterpolationSample>) -> Result<Dataset> {
        if samples.is_empty() {
            return Err(Error::invalid("dataset has no samples"));
        }
        let dim = samples[0].frame0.raw_dim();
        for s in &samples {
            if s.frame0.raw_dim() != dim {
                return Err(Error::invalid("samples differ in resolution"));
            }
            if s.gt_times.len() != skip {
                return Err(Error::invalid(format!(
                    "sample has {} intermediates but skip is {skip}",
                    s.gt_times.len()
                )));
            }
        }
        Ok(Dataset { skip, seed, samples })
    }

    pub fn channels(&self) -> usize {
        self.samples[0].channels()
    }

    pub fn height(&self) -> usize {
        self.samples[0].height()
    }

    pub fn width(&self) -> usize {
        self.samples[0].width()
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    width: usize,
    height: usize,
    channels: usize,
    skip: usize,
    seed: u64,
    samples: usize,
}

#[derive(Serialize, Deserialize)]
struct SampleManifest {
    t0: f64,
    t1: f64,
    times: Vec<f64>,
    skip: usize,
    seed: u64,
}

fn sample_dir_name(i: usize) -> String {
    format!("sample_{i:03}")
}

fn gt_name(k: usize) -> String {
    format!("gt_{k:02}.png")
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = DatasetManifest {
        width: ds.width(),
        height: ds.height(),
        channels: ds.channels(),
        skip: ds.skip,
        seed: ds.seed,
        samples: ds.samples.len(),
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::invalid(format!("manifest serialization: {e}")))?;
    fs::write(dir.join("dataset.txt"), text).map_err(|e| Error::io(dir, e))?;

    for (i, s) in ds.samples.iter().enumerate() {
        let sdir = dir.join(sample_dir_name(i));
        fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
        write_frame_png(&sdir.join("in0.png"), &s.frame0)?;
        write_frame_png(&sdir.join("in1.png"), &s.frame1)?;
        for (k, frame) in s.gt_frames.iter().enumerate() {
            if let Some(frame) = frame {
                write_frame_png(&sdir.join(gt_name(k)), frame)?;
            }
        }
        write_events_binary(&sdir.join("events.evt"), &s.events)?;
        let sm = SampleManifest {
            t0: s.t0,
            t1: s.t1,
            times: s.gt_times.clone(),
            skip: ds.skip,
            seed: ds.seed,
        };
        let text = toml::to_string(&sm)
            .map_err(|e| Error::invalid(format!("manifest serialization: {e}")))?;
        fs::write(sdir.join("sample.txt"), text).map_err(|e| Error::io(&sdir, e))?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("dataset.txt");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest =
        toml::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;

    let mut samples = Vec::with_capacity(manifest.samples);
    for i in 0..manifest.samples {
        let sdir = dir.join(sample_dir_name(i));
        let sm_path = sdir.join("sample.txt");
        let text = fs::read_to_string(&sm_path).map_err(|e| Error::io(&sm_path, e))?;
        let sm: SampleManifest =
            toml::from_str(&text).map_err(|e| Error::format(&sm_path, e.to_string()))?;
        if sm.skip != manifest.skip {
            return Err(Error::format(
                &sm_path,
                format!("sample skip {} contradicts dataset skip {}", sm.skip, manifest.skip),
            ));
        }
        let frame0 = read_frame_png(&sdir.join("in0.png"))?;
        let frame1 = read_frame_png(&sdir.join("in1.png"))?;
        let gt_frames: Vec<Option<Array3<f64>>> = (0..sm.times.len())
            .map(|k| {
                let p = sdir.join(gt_name(k));
                if p.exists() {
                    read_frame_png(&p).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        let events = read_events_binary(&sdir.join("events.evt"))?;
        samples.push(
            InterpolationSample::new(sm.t0, sm.t1, frame0, frame1, sm.times, gt_frames, events)
                .map_err(|e| Error::format(&sdir, e.to_string()))?,
        );
    }
    Dataset::new(manifest.skip, manifest.seed, samples)
}
