//! Frame-to-event simulation: per-pixel log-intensity reference tracking
//! with linearly interpolated crossing times.

use ndarray::{Array2, Array3};

use super::{Direction, Event, EventStream};
use crate::{Error, Result};

/// A time-stamped sequence of frames. All frames share one shape (C, H, W)
/// with C = 1 (grayscale) or 3 (RGB), intensities in [0, 1], and strictly
/// increasing timestamps. Construction enforces all of that, so downstream
/// code can rely on it.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<(f64, Array3<f64>)>,
}

impl FrameSequence {
    pub fn new(frames: Vec<(f64, Array3<f64>)>) -> Result<FrameSequence> {
        if frames.is_empty() {
            return Err(Error::invalid("frame sequence is empty"));
        }
        let shape = frames[0].1.raw_dim();
        if shape[0] != 1 && shape[0] != 3 {
            return Err(Error::invalid(format!(
                "frames must have 1 or 3 channels, got {}",
                shape[0]
            )));
        }
        for (i, (t, img)) in frames.iter().enumerate() {
            if img.raw_dim() != shape {
                return Err(Error::invalid(format!(
                    "frame {i} shape {:?} differs from {:?}",
                    img.shape(),
                    shape
                )));
            }
            if !t.is_finite() || (i > 0 && *t <= frames[i - 1].0) {
                return Err(Error::invalid(format!(
                    "frame timestamps must increase strictly (frame {i} at t={t})"
                )));
            }
            if img.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::invalid(format!(
                    "frame {i} has intensities outside [0, 1]"
                )));
            }
        }
        Ok(FrameSequence { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].1.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames[0].1.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames[0].1.shape()[2]
    }

    pub fn time(&self, i: usize) -> f64 {
        self.frames[i].0
    }

    pub fn frame(&self, i: usize) -> &Array3<f64> {
        &self.frames[i].1
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().map(|(t, _)| *t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, Array3<f64>)> {
        self.frames.iter()
    }

    /// Luminance of frame `i`: the single channel for grayscale, the BT.601
    /// weighting for RGB.
    pub fn luminance(&self, i: usize) -> Array2<f64> {
        luminance(&self.frames[i].1)
    }
}

pub fn luminance(img: &Array3<f64>) -> Array2<f64> {
    match img.shape()[0] {
        1 => img.index_axis(ndarray::Axis(0), 0).to_owned(),
        3 => {
            let r = img.index_axis(ndarray::Axis(0), 0);
            let g = img.index_axis(ndarray::Axis(0), 1);
            let b = img.index_axis(ndarray::Axis(0), 2);
            0.299 * &r + 0.587 * &g + 0.114 * &b
        }
        c => panic!("unsupported channel count {c}"),
    }
}

/// Contrast-threshold simulator parameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    /// Contrast threshold in log-intensity units; one event per crossing.
    pub threshold: f64,
    /// Offset added to intensities before the log, avoiding log(0).
    pub epsilon: f64,
    /// Minimum inter-event gap per pixel, in seconds. Crossings inside the
    /// gap are consumed (the reference still advances) but emit nothing.
    pub refractory: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            threshold: 0.15,
            epsilon: 1e-3,
            refractory: 0.0,
        }
    }
}

impl SimulatorConfig {
    fn validate(&self) -> Result<()> {
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::invalid("simulator threshold must be > 0"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid("simulator epsilon must be > 0"));
        }
        if !(self.refractory.is_finite() && self.refractory >= 0.0) {
            return Err(Error::invalid("refractory period must be >= 0"));
        }
        Ok(())
    }
}

/// Simulates an event stream from a frame sequence.
///
/// Each pixel tracks a reference level in log space, kept at an exact
/// multiple of the threshold above its initial value so that crossing
/// counts match floor(|ΔL| / τ) on monotone signals. Log intensity is
/// interpolated linearly between frames to place event timestamps.
pub fn simulate_events(frames: &FrameSequence, cfg: &SimulatorConfig) -> Result<EventStream> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(Error::invalid("need at least 2 frames to simulate events"));
    }
    let (h, w) = (frames.height(), frames.width());
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(Error::invalid("frame resolution exceeds sensor coordinate range"));
    }
    let tau = cfg.threshold;

    let log_lum = |i: usize| frames.luminance(i).mapv(|v| (v + cfg.epsilon).ln());

    let base = log_lum(0);
    // Reference level for pixel q is base[q] + steps[q] * tau, recomputed
    // from the integer step count each segment so it cannot drift.
    let mut steps = Array2::<i64>::zeros((h, w));
    let mut last_emit = Array2::<f64>::from_elem((h, w), f64::NEG_INFINITY);
    let mut events: Vec<Event> = Vec::new();

    let mut prev = base.clone();
    for i in 1..frames.len() {
        let next = log_lum(i);
        let (t0, t1) = (frames.time(i - 1), frames.time(i));
        for y in 0..h {
            for x in 0..w {
                let (l0, l1) = (prev[[y, x]], next[[y, x]]);
                let reference = base[[y, x]] + steps[[y, x]] as f64 * tau;
                let (polarity, crossings) = if l1 > reference {
                    (1i8, ((l1 - reference) / tau).floor() as i64)
                } else {
                    (-1i8, ((reference - l1) / tau).floor() as i64)
                };
                let span = l1 - l0;
                for j in 1..=crossings {
                    let level = base[[y, x]] + (steps[[y, x]] + polarity as i64 * j) as f64 * tau;
                    let alpha = if span.abs() > 0.0 {
                        ((level - l0) / span).clamp(0.0, 1.0)
                    } else {
                        1.0
                    };
                    let t = t0 + alpha * (t1 - t0);
                    if t - last_emit[[y, x]] >= cfg.refractory {
                        events.push(Event::new(x as u16, y as u16, t, polarity));
                        last_emit[[y, x]] = t;
                    }
                }
                steps[[y, x]] += polarity as i64 * crossings;
            }
        }
        prev = next;
    }

    EventStream::new(
        w as u16,
        h as u16,
        frames.time(0),
        frames.time(frames.len() - 1),
        Direction::Forward,
        events,
    )
}
