//! Event data model: timestamped polarity impulses, windowed streams,
//! approximate time reversal, and the 4-channel image representation.

pub mod io;
pub mod sim;

pub use sim::{simulate_events, FrameSequence, SimulatorConfig};

use ndarray::Array3;

use crate::{Error, Result};

/// Temporal orientation of a stream. Reversed streams come out of
/// [`EventStream::reversed`] only; they approximate a backward-in-time
/// recording by mirrored timestamps and flipped polarities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Reversed,
}

impl Direction {
    pub fn flipped(self) -> Direction {
        match self {
            Direction::Forward => Direction::Reversed,
            Direction::Reversed => Direction::Forward,
        }
    }
}

/// A single brightness-change impulse. `p` is +1 (brighter) or -1 (darker).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: f64,
    pub p: i8,
}

impl Event {
    pub fn new(x: u16, y: u16, t: f64, p: i8) -> Event {
        Event { x, y, t, p }
    }
}

/// Canonical event order: (t, y, x, p). Equal-timestamp events get a
/// deterministic order so that serialization and reversal are reproducible.
fn canonical_cmp(a: &Event, b: &Event) -> std::cmp::Ordering {
    a.t.total_cmp(&b.t)
        .then(a.y.cmp(&b.y))
        .then(a.x.cmp(&b.x))
        .then(a.p.cmp(&b.p))
}

/// A time-ordered sequence of events on a window `[t_start, t_end]` with a
/// fixed sensor resolution and a direction tag.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    width: u16,
    height: u16,
    t_start: f64,
    t_end: f64,
    direction: Direction,
    events: Vec<Event>,
}

impl EventStream {
    /// Builds a stream, sorting events into canonical order.
    ///
    /// Rejects events outside the window or the sensor area, polarities
    /// other than +1/-1, and inverted or non-finite windows.
    pub fn new(
        width: u16,
        height: u16,
        t_start: f64,
        t_end: f64,
        direction: Direction,
        mut events: Vec<Event>,
    ) -> Result<EventStream> {
        if !(t_start.is_finite() && t_end.is_finite()) || t_start > t_end {
            return Err(Error::invalid(format!(
                "bad stream window [{t_start}, {t_end}]"
            )));
        }
        for e in &events {
            if e.p != 1 && e.p != -1 {
                return Err(Error::invalid(format!("polarity {} is not +1/-1", e.p)));
            }
            if e.x >= width || e.y >= height {
                return Err(Error::invalid(format!(
                    "event at ({}, {}) outside {width}x{height} sensor",
                    e.x, e.y
                )));
            }
            if !e.t.is_finite() || e.t < t_start || e.t > t_end {
                return Err(Error::invalid(format!(
                    "event time {} outside window [{t_start}, {t_end}]",
                    e.t
                )));
            }
        }
        events.sort_by(canonical_cmp);
        Ok(EventStream {
            width,
            height,
            t_start,
            t_end,
            direction,
            events,
        })
    }

    pub fn empty(width: u16, height: u16, t_start: f64, t_end: f64) -> EventStream {
        EventStream::new(width, height, t_start, t_end, Direction::Forward, Vec::new())
            .expect("empty stream is always valid")
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn window(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Restricts a forward stream to the closed interval `[a, b]`, which
    /// becomes the new window. Reversed streams cannot be sliced; reverse
    /// a forward slice instead.
    pub fn slice(&self, a: f64, b: f64) -> Result<EventStream> {
        if self.direction != Direction::Forward {
            return Err(Error::invalid("cannot slice a reversed stream"));
        }
        if !(self.t_start <= a && a <= b && b <= self.t_end) {
            return Err(Error::invalid(format!(
                "slice [{a}, {b}] not inside window [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        let events = self
            .events
            .iter()
            .filter(|e| e.t >= a && e.t <= b)
            .copied()
            .collect();
        Ok(EventStream {
            width: self.width,
            height: self.height,
            t_start: a,
            t_end: b,
            direction: Direction::Forward,
            events,
        })
    }

    /// Approximate time reversal: each event (x, y, t, p) becomes
    /// (x, y, t_start + t_end - t, -p). The window is unchanged, the
    /// direction tag flips, and the result is re-sorted canonically.
    /// Reversing twice restores the original stream.
    pub fn reversed(&self) -> EventStream {
        let pivot = self.t_start + self.t_end;
        let mut events: Vec<Event> = self
            .events
            .iter()
            .map(|e| Event::new(e.x, e.y, pivot - e.t, -e.p))
            .collect();
        events.sort_by(canonical_cmp);
        EventStream {
            width: self.width,
            height: self.height,
            t_start: self.t_start,
            t_end: self.t_end,
            direction: self.direction.flipped(),
            events,
        }
    }

    /// Collapses the stream into the 4-channel image representation:
    /// per-pixel positive/negative counts plus the latest timestamp of each
    /// polarity, normalized to the window. A zero-width window yields an
    /// all-zero tensor.
    pub fn tensorize(&self) -> EventTensor {
        let (h, w) = (self.height as usize, self.width as usize);
        let mut data = Array3::<f64>::zeros((4, h, w));
        let width_t = self.t_end - self.t_start;
        if width_t > 0.0 {
            for e in &self.events {
                let (x, y) = (e.x as usize, e.y as usize);
                let norm_t = (e.t - self.t_start) / width_t;
                // Events are in time order, so the last write per pixel
                // and polarity is the latest timestamp.
                if e.p > 0 {
                    data[[0, y, x]] += 1.0;
                    data[[2, y, x]] = norm_t;
                } else {
                    data[[1, y, x]] += 1.0;
                    data[[3, y, x]] = norm_t;
                }
            }
        }
        EventTensor {
            data,
            t_start: self.t_start,
            t_end: self.t_end,
            direction: self.direction,
        }
    }
}

/// 4-channel image form of an event window: channel 0/1 hold positive and
/// negative counts, channel 2/3 the latest normalized timestamp per polarity
/// (0 where a pixel saw no event of that polarity). Carries the source
/// stream's direction tag so flow estimators can check their routing.
#[derive(Clone, Debug, PartialEq)]
pub struct EventTensor {
    pub data: Array3<f64>,
    t_start: f64,
    t_end: f64,
    direction: Direction,
}

impl EventTensor {
    pub fn window(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// All-zero tensor tagged with the given window and direction; stands in
    /// for "no events observed" in model paths that need a placeholder.
    pub fn zeros(width: usize, height: usize, window: (f64, f64), direction: Direction) -> Self {
        EventTensor {
            data: Array3::zeros((4, height, width)),
            t_start: window.0,
            t_end: window.1,
            direction,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ev(x: u16, y: u16, t: f64, p: i8) -> Event {
        Event::new(x, y, t, p)
    }

    #[test]
    fn slice_identity_returns_full_stream() {
        let s = EventStream::new(
            4,
            4,
            0.0,
            1.0,
            Direction::Forward,
            vec![ev(0, 0, 0.1, 1), ev(1, 2, 0.5, -1), ev(3, 3, 0.9, 1)],
        )
        .unwrap();
        let full = s.slice(0.0, 1.0).unwrap();
        assert_eq!(full, s);
    }

    #[test]
    fn slice_empty_interval_is_empty_with_zero_width_window() {
        let s = EventStream::new(4, 4, 0.0, 1.0, Direction::Forward, vec![ev(0, 0, 0.1, 1)])
            .unwrap();
        let z = s.slice(0.5, 0.5).unwrap();
        assert!(z.is_empty());
        assert_eq!(z.window(), (0.5, 0.5));
    }

    #[test]
    fn slice_filters_by_timestamp() {
        let s = EventStream::new(
            4,
            4,
            0.0,
            1.0,
            Direction::Forward,
            vec![ev(0, 0, 0.1, 1), ev(1, 1, 0.5, -1), ev(2, 2, 0.9, 1)],
        )
        .unwrap();
        let cut = s.slice(0.3, 0.95).unwrap();
        let times: Vec<f64> = cut.events().iter().map(|e| e.t).collect();
        assert_eq!(times, vec![0.5, 0.9]);
        assert_eq!(cut.window(), (0.3, 0.95));
    }

    #[test]
    fn slice_rejects_reversed_and_out_of_window() {
        let s = EventStream::empty(4, 4, 0.0, 1.0);
        assert!(s.reversed().slice(0.0, 0.5).is_err());
        assert!(s.slice(-0.1, 0.5).is_err());
        assert!(s.slice(0.6, 0.5).is_err());
    }

    #[test]
    fn reverse_mirrors_times_and_flips_polarity() {
        let s = EventStream::new(
            4,
            4,
            0.0,
            1.0,
            Direction::Forward,
            vec![ev(1, 1, 0.2, 1), ev(2, 3, 0.7, -1)],
        )
        .unwrap();
        let r = s.reversed();
        assert_eq!(r.direction(), Direction::Reversed);
        assert_eq!(r.window(), (0.0, 1.0));
        // (2,3,0.7,-1) -> (2,3,0.3,+1) now comes first.
        assert_eq!((r.events()[0].x, r.events()[0].y, r.events()[0].p), (2, 3, 1));
        assert_abs_diff_eq!(r.events()[0].t, 0.3, epsilon = 1e-12);
        assert_eq!((r.events()[1].x, r.events()[1].y, r.events()[1].p), (1, 1, -1));
        assert_abs_diff_eq!(r.events()[1].t, 0.8, epsilon = 1e-12);
    }

    #[test]
    fn reverse_of_empty_is_empty() {
        let s = EventStream::empty(4, 4, 0.0, 1.0);
        let r = s.reversed();
        assert!(r.is_empty());
        assert_eq!(r.direction(), Direction::Reversed);
    }

    #[test]
    fn tensorize_counts_and_latest_timestamps() {
        let s = EventStream::new(
            4,
            4,
            0.0,
            1.0,
            Direction::Forward,
            vec![ev(1, 1, 0.2, 1), ev(1, 1, 0.8, 1)],
        )
        .unwrap();
        let t = s.tensorize();
        assert_eq!(t.data[[0, 1, 1]], 2.0);
        assert_eq!(t.data[[2, 1, 1]], 0.8);
        assert_eq!(t.data[[1, 1, 1]], 0.0);
        assert_eq!(t.data[[3, 1, 1]], 0.0);
        // No other pixel is touched.
        assert_eq!(t.data.sum(), 2.0 + 0.8);
    }

    #[test]
    fn tensorize_empty_stream_is_zero() {
        let t = EventStream::empty(3, 5, 0.0, 1.0).tensorize();
        assert_eq!(t.data.shape(), &[4, 5, 3]);
        assert_eq!(t.data.sum(), 0.0);
    }

    #[test]
    fn tensorize_zero_width_window_is_zero() {
        let s = EventStream::new(2, 2, 0.5, 0.5, Direction::Forward, vec![ev(0, 0, 0.5, 1)])
            .unwrap();
        assert_eq!(s.tensorize().data.sum(), 0.0);
    }

    #[test]
    fn new_rejects_bad_events() {
        assert!(EventStream::new(2, 2, 0.0, 1.0, Direction::Forward, vec![ev(2, 0, 0.5, 1)])
            .is_err());
        assert!(EventStream::new(2, 2, 0.0, 1.0, Direction::Forward, vec![ev(0, 0, 1.5, 1)])
            .is_err());
        assert!(EventStream::new(2, 2, 0.0, 1.0, Direction::Forward, vec![ev(0, 0, 0.5, 0)])
            .is_err());
        assert!(EventStream::new(2, 2, 1.0, 0.0, Direction::Forward, vec![]).is_err());
    }

    prop_compose! {
        pub(crate) fn arb_stream(max_side: u16, max_events: usize)
            (w in 1..max_side, h in 1..max_side, n in 0..max_events)
            (w in Just(w), h in Just(h),
             xs in prop::collection::vec(0..w, n),
             ys in prop::collection::vec(0..h, n),
             ts in prop::collection::vec(0.0f64..1.0, n),
             ps in prop::collection::vec(prop::bool::ANY, n))
            -> EventStream
        {
            let events = xs.into_iter().zip(ys).zip(ts).zip(ps)
                .map(|(((x, y), t), p)| Event::new(x, y, t, if p { 1 } else { -1 }))
                .collect();
            EventStream::new(w, h, 0.0, 1.0, Direction::Forward, events).unwrap()
        }
    }

    proptest! {
        #[test]
        fn reversal_is_an_involution(s in arb_stream(16, 64)) {
            let rr = s.reversed().reversed();
            prop_assert_eq!(rr.direction(), s.direction());
            prop_assert_eq!(rr.events().len(), s.events().len());
            for (a, b) in rr.events().iter().zip(s.events()) {
                prop_assert_eq!((a.x, a.y, a.p), (b.x, b.y, b.p));
                prop_assert!((a.t - b.t).abs() < 1e-12);
            }
        }

        #[test]
        fn reversal_swaps_polarity_counts(s in arb_stream(16, 64)) {
            let pos = |s: &EventStream| s.events().iter().filter(|e| e.p > 0).count();
            let neg = |s: &EventStream| s.events().iter().filter(|e| e.p < 0).count();
            let r = s.reversed();
            prop_assert_eq!(pos(&r), neg(&s));
            prop_assert_eq!(neg(&r), pos(&s));
        }

        #[test]
        fn tensorize_conserves_counts(s in arb_stream(16, 64)) {
            let t = s.tensorize();
            let count_sum: f64 = t.data.slice(ndarray::s![0..2, .., ..]).sum();
            prop_assert_eq!(count_sum as usize, s.len());
        }

        #[test]
        fn tensorize_timestamp_channels_in_unit_interval(s in arb_stream(16, 64)) {
            let t = s.tensorize();
            let stamps = t.data.slice(ndarray::s![2..4, .., ..]);
            for &v in stamps.iter() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            // Pixels with at least one strictly-interior event of a polarity
            // carry a strictly positive stamp.
            for e in s.events().iter().filter(|e| e.t > 0.0) {
                let ch = if e.p > 0 { 2 } else { 3 };
                prop_assert!(t.data[[ch, e.y as usize, e.x as usize]] > 0.0);
            }
        }

        #[test]
        fn slicing_concatenates(s in arb_stream(16, 64), cut in 0.0f64..1.0) {
            // Cut points that hit an event exactly would duplicate it across
            // the two halves; skip those measure-zero draws.
            prop_assume!(s.events().iter().all(|e| e.t != cut));
            let left = s.slice(0.0, cut).unwrap();
            let right = s.slice(cut, 1.0).unwrap();
            let mut glued: Vec<Event> = left.events().to_vec();
            glued.extend_from_slice(right.events());
            prop_assert_eq!(glued.as_slice(), s.events());
        }
    }
}
