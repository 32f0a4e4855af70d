//! On-disk formats: a little-endian binary event file, a CSV alternative
//! for debugging, and frame directories with a filename→timestamp manifest.
//!
//! Binary layout: a 24-byte header (magic "EVT0", u16 width, u16 height,
//! f64 t_start, f64 t_end) followed by 13-byte records (u16 x, u16 y,
//! f64 t, i8 p), everything little-endian. Files always hold forward
//! streams; reversed streams are derived in memory, never stored.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;

use super::{Direction, Event, EventStream, FrameSequence};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"EVT0";
const RECORD_LEN: usize = 13;

pub fn write_events_binary(path: &Path, stream: &EventStream) -> Result<()> {
    if stream.direction() != Direction::Forward {
        return Err(Error::invalid("only forward streams are stored on disk"));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |buf: &[u8]| w.write_all(buf).map_err(|e| Error::io(path, e));
    emit(MAGIC)?;
    emit(&stream.width().to_le_bytes())?;
    emit(&stream.height().to_le_bytes())?;
    emit(&stream.t_start().to_le_bytes())?;
    emit(&stream.t_end().to_le_bytes())?;
    for e in stream.events() {
        emit(&e.x.to_le_bytes())?;
        emit(&e.y.to_le_bytes())?;
        emit(&e.t.to_le_bytes())?;
        emit(&e.p.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_events_binary(path: &Path) -> Result<EventStream> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut header = [0u8; 24];
    r.read_exact(&mut header)
        .map_err(|_| Error::format(path, "file shorter than the 24-byte header"))?;
    if &header[0..4] != MAGIC {
        return Err(Error::format(path, "bad magic, expected EVT0"));
    }
    let width = u16::from_le_bytes([header[4], header[5]]);
    let height = u16::from_le_bytes([header[6], header[7]]);
    let t_start = f64::from_le_bytes(header[8..16].try_into().unwrap());
    let t_end = f64::from_le_bytes(header[16..24].try_into().unwrap());

    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() % RECORD_LEN != 0 {
        return Err(Error::format(
            path,
            format!("truncated record: {} trailing bytes", body.len() % RECORD_LEN),
        ));
    }
    let events = body
        .chunks_exact(RECORD_LEN)
        .map(|c| Event {
            x: u16::from_le_bytes([c[0], c[1]]),
            y: u16::from_le_bytes([c[2], c[3]]),
            t: f64::from_le_bytes(c[4..12].try_into().unwrap()),
            p: c[12] as i8,
        })
        .collect();
    EventStream::new(width, height, t_start, t_end, Direction::Forward, events)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// CSV form: `# key=value` metadata comments, then one `x,y,t,p` line per
/// event. Readable without the metadata (resolution and window are then
/// inferred from the events themselves).
pub fn write_events_csv(path: &Path, stream: &EventStream) -> Result<()> {
    if stream.direction() != Direction::Forward {
        return Err(Error::invalid("only forward streams are stored on disk"));
    }
    let mut out = String::new();
    out.push_str(&format!("# width={}\n", stream.width()));
    out.push_str(&format!("# height={}\n", stream.height()));
    out.push_str(&format!("# t_start={}\n", stream.t_start()));
    out.push_str(&format!("# t_end={}\n", stream.t_end()));
    for e in stream.events() {
        out.push_str(&format!("{},{},{},{}\n", e.x, e.y, e.t, e.p));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_events_csv(path: &Path) -> Result<EventStream> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut meta: std::collections::HashMap<String, String> = Default::default();
    let mut events: Vec<Event> = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::format(path, format!("line {}: expected x,y,t,p", ln + 1)));
        }
        let parse_err = |what: &str| Error::format(path, format!("line {}: bad {what}", ln + 1));
        events.push(Event {
            x: fields[0].parse().map_err(|_| parse_err("x"))?,
            y: fields[1].parse().map_err(|_| parse_err("y"))?,
            t: fields[2].parse().map_err(|_| parse_err("t"))?,
            p: fields[3].parse().map_err(|_| parse_err("p"))?,
        });
    }
    let get = |k: &str| meta.get(k).and_then(|v| v.parse::<f64>().ok());
    let width = get("width").map(|v| v as u16).unwrap_or_else(|| {
        events.iter().map(|e| e.x + 1).max().unwrap_or(1)
    });
    let height = get("height").map(|v| v as u16).unwrap_or_else(|| {
        events.iter().map(|e| e.y + 1).max().unwrap_or(1)
    });
    let t_start = get("t_start")
        .unwrap_or_else(|| events.iter().map(|e| e.t).fold(f64::INFINITY, f64::min).min(0.0));
    let t_end = get("t_end")
        .unwrap_or_else(|| events.iter().map(|e| e.t).fold(0.0, f64::max));
    EventStream::new(width, height, t_start, t_end, Direction::Forward, events)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn quantize_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes one frame as an 8-bit PNG (grayscale or RGB by channel count).
pub fn write_frame_png(path: &Path, frame: &Array3<f64>) -> Result<()> {
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    let save_err = |e: image::ImageError| {
        Error::io(path, std::io::Error::other(e.to_string()))
    };
    match c {
        1 => {
            let buf: Vec<u8> = frame.iter().map(|&v| quantize_u8(v)).collect();
            image::GrayImage::from_raw(w as u32, h as u32, buf)
                .expect("buffer sized from shape")
                .save(path)
                .map_err(save_err)
        }
        3 => {
            let mut buf = Vec::with_capacity(w * h * 3);
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..3 {
                        buf.push(quantize_u8(frame[[ch, y, x]]));
                    }
                }
            }
            image::RgbImage::from_raw(w as u32, h as u32, buf)
                .expect("buffer sized from shape")
                .save(path)
                .map_err(save_err)
        }
        c => Err(Error::invalid(format!("cannot write {c}-channel frame"))),
    }
}

pub fn read_frame_png(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let arr = match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let mut a = Array3::zeros((1, h, w));
            for (x, y, p) in g.enumerate_pixels() {
                a[[0, y as usize, x as usize]] = p.0[0] as f64 / 255.0;
            }
            a
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let mut a = Array3::zeros((3, h, w));
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    a[[c, y as usize, x as usize]] = p.0[c] as f64 / 255.0;
                }
            }
            a
        }
    };
    Ok(arr)
}

/// Writes a frame sequence as PNGs plus a `frames.txt` manifest with one
/// `filename timestamp` pair per line.
pub fn write_frame_dir(dir: &Path, frames: &FrameSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, (t, frame)) in frames.iter().enumerate() {
        let name = format!("frame_{i:05}.png");
        write_frame_png(&dir.join(&name), frame)?;
        manifest.push_str(&format!("{name} {t}\n"));
    }
    fs::write(dir.join("frames.txt"), manifest).map_err(|e| Error::io(dir, e))
}

pub fn read_frame_dir(dir: &Path) -> Result<FrameSequence> {
    let manifest_path = dir.join("frames.txt");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut frames = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (name, t) = line.split_once(' ').ok_or_else(|| {
            Error::format(&manifest_path, format!("line {}: expected `file time`", ln + 1))
        })?;
        let t: f64 = t.trim().parse().map_err(|_| {
            Error::format(&manifest_path, format!("line {}: bad timestamp", ln + 1))
        })?;
        frames.push((t, read_frame_png(&dir.join(name))?));
    }
    FrameSequence::new(frames)
        .map_err(|e| Error::format(&manifest_path, e.to_string()))
}
