//! Diagnostic images: frame comparison strips, flow color maps, event
//! accumulation maps, and metric curves. Everything is rendered
//! deterministically from numbers, no fonts or system state involved.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::event::EventStream;
use crate::model::FlowField;

const SEPARATOR: u32 = 2;
const SEPARATOR_COLOR: Rgb<u8> = Rgb([40, 40, 40]);

fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path)
        .map_err(|e| Error::format(path, format!("png encode failed: {e}")))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Frame (C, H, W) in [0, 1] to RGB pixels; single channel replicates.
fn frame_pixels(frame: &Array3<f64>) -> Result<RgbImage> {
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    if c != 1 && c != 3 {
        return Err(Error::invalid(format!("cannot plot a {c}-channel frame")));
    }
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = if c == 1 {
                let v = to_u8(frame[[0, y, x]]);
                Rgb([v, v, v])
            } else {
                Rgb([
                    to_u8(frame[[0, y, x]]),
                    to_u8(frame[[1, y, x]]),
                    to_u8(frame[[2, y, x]]),
                ])
            };
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    Ok(img)
}

/// Tiles `rows` of equally sized frames into one image, rows stacked top to
/// bottom with thin separators. Typical use: ground truth above predictions.
pub fn save_frame_strip(path: &Path, rows: &[Vec<&Array3<f64>>]) -> Result<()> {
    let first = rows
        .iter()
        .flat_map(|r| r.iter())
        .next()
        .ok_or_else(|| Error::invalid("frame strip needs at least one frame"))?;
    let dim = first.raw_dim();
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    for f in rows.iter().flat_map(|r| r.iter()) {
        if f.raw_dim() != dim {
            return Err(Error::invalid("frame strip frames differ in shape"));
        }
    }
    let (h, w) = (dim[1] as u32, dim[2] as u32);
    let total_w = cols as u32 * w + (cols as u32 - 1) * SEPARATOR;
    let total_h = rows.len() as u32 * h + (rows.len() as u32 - 1) * SEPARATOR;
    let mut img = RgbImage::from_pixel(total_w, total_h, SEPARATOR_COLOR);
    for (ri, row) in rows.iter().enumerate() {
        for (ci, frame) in row.iter().enumerate() {
            let tile = frame_pixels(frame)?;
            let ox = ci as u32 * (w + SEPARATOR);
            let oy = ri as u32 * (h + SEPARATOR);
            for y in 0..h {
                for x in 0..w {
                    img.put_pixel(ox + x, oy + y, *tile.get_pixel(x, y));
                }
            }
        }
    }
    save_png(path, &img)
}

/// Hue from angle, saturation/value from magnitude. `m` in [0, 1].
fn wheel_color(angle: f64, m: f64) -> Rgb<u8> {
    let hue = (angle.rem_euclid(std::f64::consts::TAU)) / std::f64::consts::TAU * 6.0;
    let sector = hue.floor() as usize % 6;
    let f = hue - hue.floor();
    // HSV with s = m, v = 1: white at zero motion, saturated hue at max.
    let p = 1.0 - m;
    let q = 1.0 - m * f;
    let t = 1.0 - m * (1.0 - f);
    let (r, g, b) = match sector {
        0 => (1.0, t, p),
        1 => (q, 1.0, p),
        2 => (p, 1.0, t),
        3 => (p, q, 1.0),
        4 => (t, p, 1.0),
        _ => (1.0, p, q),
    };
    Rgb([to_u8(r), to_u8(g), to_u8(b)])
}

/// Standard flow visualization: direction as hue, speed as saturation.
/// Magnitudes are normalized by the field's own maximum.
pub fn save_flow_map(path: &Path, flow: &FlowField) -> Result<()> {
    let (h, w) = (flow.data.shape()[1], flow.data.shape()[2]);
    let max_mag = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .map(|(y, x)| flow.data[[0, y, x]].hypot(flow.data[[1, y, x]]))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (flow.data[[0, y, x]], flow.data[[1, y, x]]);
            let px = wheel_color(dy.atan2(dx), dx.hypot(dy) / max_mag);
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    save_png(path, &img)
}

/// Event accumulation map: positive counts in red, negative in blue, both
/// scaled by the busiest pixel.
pub fn save_event_map(path: &Path, stream: &EventStream) -> Result<()> {
    let (h, w) = (stream.height() as usize, stream.width() as usize);
    let mut pos = vec![0u32; h * w];
    let mut neg = vec![0u32; h * w];
    for e in stream.events() {
        let idx = e.y as usize * w + e.x as usize;
        if e.p > 0 {
            pos[idx] += 1;
        } else {
            neg[idx] += 1;
        }
    }
    let peak = pos.iter().chain(neg.iter()).copied().max().unwrap_or(0).max(1) as f64;
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let r = to_u8(pos[idx] as f64 / peak);
            let b = to_u8(neg[idx] as f64 / peak);
            img.put_pixel(x as u32, y as u32, Rgb([r, 0, b]));
        }
    }
    save_png(path, &img)
}

const CURVE_W: u32 = 480;
const CURVE_H: u32 = 240;
const CURVE_MARGIN: u32 = 12;

/// Polyline of (x, y) points on a fixed canvas with min/max autoscaling,
/// for loss or PSNR curves. Points are drawn in the order given.
pub fn save_metric_curve(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    if points.len() < 2 {
        return Err(Error::invalid("metric curve needs at least 2 points"));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("metric curve points must be finite"));
    }
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    let x_span = (x_hi - x_lo).max(1e-12);
    let y_span = (y_hi - y_lo).max(1e-12);

    let inner_w = (CURVE_W - 2 * CURVE_MARGIN) as f64;
    let inner_h = (CURVE_H - 2 * CURVE_MARGIN) as f64;
    let project = |x: f64, y: f64| -> (i64, i64) {
        let px = CURVE_MARGIN as f64 + (x - x_lo) / x_span * inner_w;
        let py = CURVE_MARGIN as f64 + (1.0 - (y - y_lo) / y_span) * inner_h;
        (px.round() as i64, py.round() as i64)
    };

    let mut img = RgbImage::from_pixel(CURVE_W, CURVE_H, Rgb([250, 250, 250]));
    let axis = Rgb([170, 170, 170]);
    for x in CURVE_MARGIN..CURVE_W - CURVE_MARGIN {
        img.put_pixel(x, CURVE_H - CURVE_MARGIN, axis);
    }
    for y in CURVE_MARGIN..CURVE_H - CURVE_MARGIN {
        img.put_pixel(CURVE_MARGIN, y, axis);
    }

    let ink = Rgb([30, 90, 200]);
    let mut prev = project(points[0].0, points[0].1);
    for &(x, y) in &points[1..] {
        let next = project(x, y);
        draw_line(&mut img, prev, next, ink);
        prev = next;
    }
    for &(x, y) in points {
        let (px, py) = project(x, y);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                put_safe(&mut img, px + dx, py + dy, ink);
            }
        }
    }
    save_png(path, &img)
}

fn put_safe(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Bresenham segment between two canvas points.
fn draw_line(img: &mut RgbImage, from: (i64, i64), to: (i64, i64), c: Rgb<u8>) {
    let (mut x, mut y) = from;
    let dx = (to.0 - x).abs();
    let dy = -(to.1 - y).abs();
    let sx = if x < to.0 { 1 } else { -1 };
    let sy = if y < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put_safe(img, x, y, c);
        if (x, y) == to {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
