//! Synthetic scenes: parametric object motion rendered to ground-truth frame
//! sequences, paired with simulated events and packaged into skip-k samples.

pub mod dataset;

pub use dataset::{make_skip_dataset, read_dataset, write_dataset, Dataset, InterpolationSample};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::event::FrameSequence;
use crate::{Error, Result};

/// Closed-form object motion, evaluable at any time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Linear {
        pos: (f64, f64),
        vel: (f64, f64),
    },
    Quadratic {
        pos: (f64, f64),
        vel: (f64, f64),
        acc: (f64, f64),
    },
    Circular {
        center: (f64, f64),
        radius: f64,
        /// Radians per second; sign sets the orbit direction.
        angular_rate: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Free flight from `pos` with velocity `vel`, reflecting off the frame
    /// boundary. The fold of the unreflected path into the box is the exact
    /// solution: position reflects at the wall and the velocity component
    /// flips sign at the analytically determined impact time.
    Bounce {
        pos: (f64, f64),
        vel: (f64, f64),
    },
}

/// Folds an unbounded coordinate into [lo, hi] by repeated reflection.
fn reflect(p: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let u = (p - lo).rem_euclid(2.0 * span);
    if u <= span {
        lo + u
    } else {
        lo + 2.0 * span - u
    }
}

impl Trajectory {
    /// Object center at time `t`. Bounce needs the frame box; other kinds
    /// ignore it.
    pub fn position(&self, t: f64, frame: (f64, f64)) -> (f64, f64) {
        match *self {
            Trajectory::Linear { pos, vel } => (pos.0 + vel.0 * t, pos.1 + vel.1 * t),
            Trajectory::Quadratic { pos, vel, acc } => (
                pos.0 + vel.0 * t + 0.5 * acc.0 * t * t,
                pos.1 + vel.1 * t + 0.5 * acc.1 * t * t,
            ),
            Trajectory::Circular {
                center,
                radius,
                angular_rate,
                phase,
            } => {
                let a = phase + angular_rate * t;
                (center.0 + radius * a.cos(), center.1 + radius * a.sin())
            }
            Trajectory::Bounce { pos, vel } => (
                reflect(pos.0 + vel.0 * t, 0.0, frame.0),
                reflect(pos.1 + vel.1 * t, 0.0, frame.1),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Disk { radius: f64 },
    Square { half_size: f64 },
    /// Square patch carrying smooth value noise so that its interior,
    /// not only its silhouette, constrains photometric losses.
    Textured { half_size: f64 },
}

impl Shape {
    fn extent(&self) -> f64 {
        match *self {
            Shape::Disk { radius } => radius,
            Shape::Square { half_size } | Shape::Textured { half_size } => half_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    #[serde(flatten)]
    pub shape: Shape,
    pub intensity: f64,
    #[serde(default)]
    pub texture_seed: u64,
    #[serde(flatten)]
    pub trajectory: Trajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Clip length in seconds; frames cover [0, duration] inclusive.
    pub duration: f64,
    /// Ground-truth frame rate. Powers of two keep timestamps exact in
    /// binary floating point.
    pub fps_gt: f64,
    #[serde(default = "default_background")]
    pub background: f64,
    pub objects: Vec<ObjectSpec>,
}

fn default_background() -> f64 {
    0.12
}

impl SceneSpec {
    pub fn n_frames(&self) -> usize {
        (self.duration * self.fps_gt).round() as usize + 1
    }

    pub fn frame_times(&self) -> Vec<f64> {
        (0..self.n_frames()).map(|i| i as f64 / self.fps_gt).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("scene must have positive resolution"));
        }
        if !(self.duration > 0.0 && self.fps_gt > 0.0) {
            return Err(Error::invalid("scene duration and fps must be positive"));
        }
        if self.n_frames() < 9 {
            return Err(Error::invalid(format!(
                "scene yields {} frames; at least 9 are needed for a 7-skip sample",
                self.n_frames()
            )));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(Error::invalid("background intensity must be in [0, 1]"));
        }
        if self.objects.is_empty() {
            return Err(Error::invalid("scene has no objects"));
        }
        let frame = (self.width as f64, self.height as f64);
        for (i, obj) in self.objects.iter().enumerate() {
            let ext = obj.shape.extent();
            if !(ext > 0.0) {
                return Err(Error::invalid(format!("object {i} has zero size")));
            }
            if !(0.0..=1.0).contains(&obj.intensity) {
                return Err(Error::invalid(format!("object {i} intensity outside [0, 1]")));
            }
            for &t in &self.frame_times() {
                let (x, y) = obj.trajectory.position(t, frame);
                let inside = x + ext > 0.0 && x - ext < frame.0 && y + ext > 0.0 && y - ext < frame.1;
                if !inside {
                    return Err(Error::invalid(format!(
                        "object {i} leaves the frame entirely at t={t}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Smooth value noise in [0, 1]: seeded random lattice values, bilinearly
/// interpolated, 4-pixel cell size in object-local coordinates.
fn value_noise(seed: u64, u: f64, v: f64) -> f64 {
    const CELL: f64 = 4.0;
    let (gu, gv) = (u / CELL, v / CELL);
    let (iu, iv) = (gu.floor() as i64, gv.floor() as i64);
    let (fu, fv) = (gu - iu as f64, gv - iv as f64);
    let corner = |du: i64, dv: i64| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ ((iu + du) as u64).wrapping_mul(0x9E3779B97F4A7C15)
                ^ ((iv + dv) as u64).wrapping_mul(0xD1B54A32D192ED03),
        );
        rng.gen_range(0.0..1.0)
    };
    let (c00, c10, c01, c11) = (corner(0, 0), corner(1, 0), corner(0, 1), corner(1, 1));
    let top = c00 + (c10 - c00) * fu;
    let bot = c01 + (c11 - c01) * fu;
    top + (bot - top) * fv
}

/// Coverage of a pixel by the object: a linear ramp of one pixel around the
/// signed-distance zero crossing, which anti-aliases edges and keeps the
/// rendered motion smooth at sub-pixel scale.
fn coverage(shape: &Shape, dx: f64, dy: f64) -> f64 {
    let sd = match *shape {
        Shape::Disk { radius } => (dx * dx + dy * dy).sqrt() - radius,
        Shape::Square { half_size } | Shape::Textured { half_size } => {
            dx.abs().max(dy.abs()) - half_size
        }
    };
    (0.5 - sd).clamp(0.0, 1.0)
}

/// Renders the scene at one instant. Intensities are snapped to the 8-bit
/// grid so that a rendered frame and its PNG round trip are bit-identical,
/// which in turn makes event simulation agree between the in-memory and
/// on-disk pipelines.
pub fn render_at(spec: &SceneSpec, t: f64) -> Array3<f64> {
    let (h, w) = (spec.height, spec.width);
    let frame = (w as f64, h as f64);
    let mut img = Array3::from_elem((1, h, w), spec.background);
    for obj in &spec.objects {
        let (cx, cy) = obj.trajectory.position(t, frame);
        let ext = obj.shape.extent() + 1.0;
        let x_lo = ((cx - ext).floor().max(0.0)) as usize;
        let x_hi = ((cx + ext).ceil().min(w as f64 - 1.0)) as usize;
        let y_lo = ((cy - ext).floor().max(0.0)) as usize;
        let y_hi = ((cy + ext).ceil().min(h as f64 - 1.0)) as usize;
        if x_lo > x_hi || y_lo > y_hi {
            continue;
        }
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let cov = coverage(&obj.shape, dx, dy);
                if cov > 0.0 {
                    let value = match obj.shape {
                        Shape::Textured { half_size } => {
                            let n = value_noise(obj.texture_seed, dx + half_size, dy + half_size);
                            (obj.intensity * (0.35 + 0.65 * n)).clamp(0.0, 1.0)
                        }
                        _ => obj.intensity,
                    };
                    let cell = &mut img[[0, y, x]];
                    *cell += cov * (value - *cell);
                }
            }
        }
    }
    img.mapv_inplace(|v| (v * 255.0).round() / 255.0);
    img
}

/// Renders the full ground-truth sequence at `fps_gt`.
pub fn render(spec: &SceneSpec) -> Result<FrameSequence> {
    spec.validate()?;
    let frames = spec
        .frame_times()
        .into_iter()
        .map(|t| (t, render_at(spec, t)))
        .collect();
    FrameSequence::new(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_scene(trajectory: Trajectory) -> SceneSpec {
        SceneSpec {
            width: 64,
            height: 64,
            duration: 1.0,
            fps_gt: 16.0,
            background: 0.12,
            objects: vec![ObjectSpec {
                shape: Shape::Disk { radius: 6.0 },
                intensity: 0.9,
                texture_seed: 0,
                trajectory,
            }],
        }
    }

    fn centroid(img: &Array3<f64>, _background: f64) -> (f64, f64) {
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for ((_, y, x), &v) in img.indexed_iter() {
            // Threshold away the (quantized) background so only the object
            // contributes; translation then moves the centroid exactly.
            let wgt = (v - 0.3).max(0.0);
            sx += wgt * (x as f64 + 0.5);
            sy += wgt * (y as f64 + 0.5);
            sw += wgt;
        }
        (sx / sw, sy / sw)
    }

    #[test]
    fn static_scene_renders_identical_frames() {
        let spec = disk_scene(Trajectory::Linear {
            pos: (32.0, 32.0),
            vel: (0.0, 0.0),
        });
        let frames = render(&spec).unwrap();
        for i in 1..frames.len() {
            assert_eq!(frames.frame(i), frames.frame(0));
        }
    }

    #[test]
    fn linear_disk_moves_one_pixel_per_frame() {
        let mut spec = disk_scene(Trajectory::Linear {
            pos: (16.0, 32.0),
            vel: (10.0, 0.0),
        });
        spec.duration = 1.0;
        spec.fps_gt = 10.0;
        let frames = render(&spec).unwrap();
        assert_eq!(frames.len(), 11);
        let mut prev = centroid(frames.frame(0), spec.background);
        for i in 1..frames.len() {
            let cur = centroid(frames.frame(i), spec.background);
            assert!((cur.0 - prev.0 - 1.0).abs() < 0.05, "dx = {}", cur.0 - prev.0);
            assert!((cur.1 - prev.1).abs() < 0.05);
            prev = cur;
        }
    }

    #[test]
    fn render_is_deterministic() {
        let spec = SceneSpec {
            objects: vec![ObjectSpec {
                shape: Shape::Textured { half_size: 7.0 },
                intensity: 0.85,
                texture_seed: 42,
                trajectory: Trajectory::Circular {
                    center: (32.0, 32.0),
                    radius: 10.0,
                    angular_rate: 3.0,
                    phase: 0.5,
                },
            }],
            ..disk_scene(Trajectory::Linear { pos: (0.0, 0.0), vel: (0.0, 0.0) })
        };
        let a = render(&spec).unwrap();
        let b = render(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bounce_reflects_at_boundary_with_flipped_velocity() {
        let traj = Trajectory::Bounce {
            pos: (32.0, 32.0),
            vel: (0.0, 40.0),
        };
        let frame = (64.0, 64.0);
        // Impact with the y = 64 wall happens at t = 0.8.
        let before = traj.position(0.7, frame).1;
        let at = traj.position(0.8, frame).1;
        let after = traj.position(0.9, frame).1;
        assert!((at - 64.0).abs() < 1e-9);
        assert!((before - 60.0).abs() < 1e-9);
        assert!((after - 60.0).abs() < 1e-9);
        // Velocity flips: approaching before, receding after.
        assert!(before < at && after < at);
        let v_before = (traj.position(0.71, frame).1 - before) / 0.01;
        let v_after = (traj.position(0.91, frame).1 - after) / 0.01;
        assert!((v_before - 40.0).abs() < 1e-6);
        assert!((v_after + 40.0).abs() < 1e-6);
    }

    #[test]
    fn validate_rejects_degenerate_and_escaping_objects() {
        let mut zero = disk_scene(Trajectory::Linear { pos: (32.0, 32.0), vel: (0.0, 0.0) });
        zero.objects[0].shape = Shape::Disk { radius: 0.0 };
        assert!(zero.validate().is_err());

        let escape = disk_scene(Trajectory::Linear {
            pos: (32.0, 32.0),
            vel: (200.0, 0.0),
        });
        assert!(escape.validate().is_err());

        let mut short = disk_scene(Trajectory::Linear { pos: (32.0, 32.0), vel: (0.0, 0.0) });
        short.duration = 0.25; // 5 frames at fps 16
        assert!(short.validate().is_err());
    }

    #[test]
    fn quadratic_follows_the_parabola() {
        let traj = Trajectory::Quadratic {
            pos: (10.0, 46.0),
            vel: (22.0, -36.0),
            acc: (0.0, 36.0),
        };
        let (x, y) = traj.position(1.0, (64.0, 64.0));
        assert!((x - 32.0).abs() < 1e-12);
        assert!((y - 28.0).abs() < 1e-12);
    }

    #[test]
    fn scene_spec_toml_round_trip() {
        let spec = disk_scene(Trajectory::Bounce {
            pos: (20.0, 30.0),
            vel: (50.0, -30.0),
        });
        let text = toml::to_string(&spec).unwrap();
        let back: SceneSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
