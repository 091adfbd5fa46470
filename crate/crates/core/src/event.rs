//! Core event data model: polarity spikes, validated streams, trigger
//! tracks, and temporal slicing.
//!
//! Timestamps are integer microseconds throughout the crate. All slicing
//! windows are half-open `[t0, t1)` so that frame-partitioned events are
//! counted exactly once. Equal-timestamp events keep their input order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sensor pixel geometry (width, height).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: u32,
    pub height: u32,
}

impl Geometry {
    pub fn new(width: u32, height: u32) -> Self {
        Geometry { width, height }
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Event polarity: the sign of the log-intensity step that fired the event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn from_i8(q: i8) -> Option<Self> {
        match q {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// A single sensor spike: pixel location, polarity, timestamp in µs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub q: Polarity,
    pub t: u64,
}

impl Event {
    pub fn new(x: u16, y: u16, q: Polarity, t: u64) -> Self {
        Event { x, y, q, t }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EventError {
    #[error("event {0} lies outside the sensor geometry")]
    OutOfBoundsEvent(usize),
    #[error("timestamp decreases at event {0}")]
    UnsortedTimestamps(usize),
    #[error("event {0} has polarity outside {{+1, -1}}")]
    InvalidPolarity(usize),
    #[error("invalid time window: t0 > t1")]
    InvalidWindow,
    #[error("at least 2 trigger timestamps are required")]
    InsufficientTriggers,
    #[error("trigger timestamps must be strictly increasing at index {0}")]
    TriggersNotIncreasing(usize),
}

/// A validated, time-ordered event stream over a fixed sensor geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    geometry: Geometry,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates raw events against the declared geometry and wraps them.
    ///
    /// Events must be sorted by non-decreasing timestamp; ties keep their
    /// input order. Coordinates are checked against the geometry.
    pub fn validate(raw: Vec<Event>, geometry: Geometry) -> Result<Self, EventError> {
        let mut last_t = 0u64;
        for (i, e) in raw.iter().enumerate() {
            if u32::from(e.x) >= geometry.width || u32::from(e.y) >= geometry.height {
                return Err(EventError::OutOfBoundsEvent(i));
            }
            if i > 0 && e.t < last_t {
                return Err(EventError::UnsortedTimestamps(i));
            }
            last_t = e.t;
        }
        Ok(EventStream {
            geometry,
            events: raw,
        })
    }

    /// Validates `(x, y, q, t)` tuples with raw integer polarity.
    pub fn validate_raw(
        raw: &[(u16, u16, i8, u64)],
        geometry: Geometry,
    ) -> Result<Self, EventError> {
        let mut events = Vec::with_capacity(raw.len());
        for (i, &(x, y, q, t)) in raw.iter().enumerate() {
            let q = Polarity::from_i8(q).ok_or(EventError::InvalidPolarity(i))?;
            events.push(Event::new(x, y, q, t));
        }
        Self::validate(events, geometry)
    }

    /// An empty stream over the given geometry.
    pub fn empty(geometry: Geometry) -> Self {
        EventStream {
            geometry,
            events: Vec::new(),
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
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

    /// `(t_first, t_last)` of the stream, or `(0, 0)` when empty.
    pub fn time_span(&self) -> (u64, u64) {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => (a.t, b.t),
            _ => (0, 0),
        }
    }

    /// Events with `t0 <= t < t1`, same geometry. The source stream is
    /// left untouched.
    pub fn slice_by_time(&self, t0: u64, t1: u64) -> Result<EventStream, EventError> {
        if t0 > t1 {
            return Err(EventError::InvalidWindow);
        }
        let start = self.events.partition_point(|e| e.t < t0);
        let end = self.events.partition_point(|e| e.t < t1);
        Ok(EventStream {
            geometry: self.geometry,
            events: self.events[start..end].to_vec(),
        })
    }

    /// Partitions the stream into the inter-frame substreams
    /// `[triggers[k], triggers[k+1])` for `k = 0 .. len-2`.
    pub fn slice_between_frames(
        &self,
        triggers: &TriggerTrack,
    ) -> Result<Vec<EventStream>, EventError> {
        let ts = triggers.timestamps();
        if ts.len() < 2 {
            return Err(EventError::InsufficientTriggers);
        }
        let mut out = Vec::with_capacity(ts.len() - 1);
        for w in ts.windows(2) {
            out.push(self.slice_by_time(w[0], w[1])?);
        }
        Ok(out)
    }
}

/// Strictly increasing frame-trigger timestamps in µs, as recorded by the
/// capture circuit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerTrack {
    timestamps: Vec<u64>,
}

impl TriggerTrack {
    pub fn new(timestamps: Vec<u64>) -> Result<Self, EventError> {
        for (i, w) in timestamps.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(EventError::TriggersNotIncreasing(i + 1));
            }
        }
        Ok(TriggerTrack { timestamps })
    }

    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> Geometry {
        Geometry::new(346, 260)
    }

    #[test]
    fn empty_stream_has_zero_span() {
        let s = EventStream::validate(vec![], geom()).unwrap();
        assert_eq!(s.time_span(), (0, 0));
        assert!(s.is_empty());
    }

    #[test]
    fn equal_timestamps_keep_input_order() {
        let raw = vec![
            Event::new(10, 20, Polarity::Positive, 5),
            Event::new(10, 20, Polarity::Negative, 5),
        ];
        let s = EventStream::validate(raw.clone(), geom()).unwrap();
        assert_eq!(s.events(), &raw[..]);
    }

    #[test]
    fn out_of_bounds_is_rejected_with_index() {
        let raw = vec![Event::new(400, 20, Polarity::Positive, 5)];
        assert_eq!(
            EventStream::validate(raw, geom()).unwrap_err(),
            EventError::OutOfBoundsEvent(0)
        );
    }

    #[test]
    fn decreasing_timestamp_is_rejected() {
        let raw = vec![
            Event::new(1, 1, Polarity::Positive, 10),
            Event::new(1, 1, Polarity::Positive, 9),
        ];
        assert_eq!(
            EventStream::validate(raw, geom()).unwrap_err(),
            EventError::UnsortedTimestamps(1)
        );
    }

    #[test]
    fn invalid_polarity_is_rejected() {
        let raw = [(10u16, 20u16, 2i8, 5u64)];
        assert_eq!(
            EventStream::validate_raw(&raw, geom()).unwrap_err(),
            EventError::InvalidPolarity(0)
        );
    }

    #[test]
    fn slice_window_is_half_open() {
        let raw = vec![
            Event::new(0, 0, Polarity::Positive, 1),
            Event::new(0, 0, Polarity::Positive, 2),
            Event::new(0, 0, Polarity::Positive, 3),
        ];
        let s = EventStream::validate(raw, geom()).unwrap();
        let sub = s.slice_by_time(2, 3).unwrap();
        assert_eq!(sub.len(), 1);
        assert_eq!(sub.events()[0].t, 2);
        assert!(s.slice_by_time(0, 0).unwrap().is_empty());
        assert_eq!(s.slice_by_time(0, 100).unwrap().events(), s.events());
        assert_eq!(
            s.slice_by_time(5, 4).unwrap_err(),
            EventError::InvalidWindow
        );
    }

    #[test]
    fn slice_between_frames_partitions() {
        let raw = vec![
            Event::new(0, 0, Polarity::Positive, 100),
            Event::new(0, 0, Polarity::Negative, 1500),
        ];
        let s = EventStream::validate(raw, geom()).unwrap();
        let tr = TriggerTrack::new(vec![0, 1000, 2000]).unwrap();
        let subs = s.slice_between_frames(&tr).unwrap();
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[0].len(), 1);
        assert_eq!(subs[1].len(), 1);
    }

    #[test]
    fn event_on_trigger_belongs_to_next_interval() {
        let raw = vec![Event::new(0, 0, Polarity::Positive, 1000)];
        let s = EventStream::validate(raw, geom()).unwrap();
        let tr = TriggerTrack::new(vec![0, 1000, 2000]).unwrap();
        let subs = s.slice_between_frames(&tr).unwrap();
        assert!(subs[0].is_empty());
        assert_eq!(subs[1].len(), 1);
    }

    #[test]
    fn empty_interval_yields_empty_substream() {
        let s = EventStream::empty(geom());
        let tr = TriggerTrack::new(vec![0, 1000]).unwrap();
        let subs = s.slice_between_frames(&tr).unwrap();
        assert_eq!(subs.len(), 1);
        assert!(subs[0].is_empty());
    }

    #[test]
    fn too_few_triggers_is_rejected() {
        let s = EventStream::empty(geom());
        let tr = TriggerTrack::new(vec![0]).unwrap();
        assert_eq!(
            s.slice_between_frames(&tr).unwrap_err(),
            EventError::InsufficientTriggers
        );
    }

    #[test]
    fn validate_is_idempotent() {
        let raw = vec![
            Event::new(3, 4, Polarity::Positive, 7),
            Event::new(3, 4, Polarity::Negative, 7),
        ];
        let s = EventStream::validate(raw, geom()).unwrap();
        let s2 = EventStream::validate(s.events().to_vec(), s.geometry()).unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn concatenated_slices_equal_full_slice() {
        let raw: Vec<Event> = (0..50)
            .map(|i| Event::new(i as u16, 0, Polarity::Positive, (i * 37) % 900))
            .collect();
        let mut sorted = raw.clone();
        sorted.sort_by_key(|e| e.t);
        let s = EventStream::validate(sorted, geom()).unwrap();
        let tr = TriggerTrack::new(vec![100, 300, 600, 800]).unwrap();
        let subs = s.slice_between_frames(&tr).unwrap();
        let concat: Vec<Event> = subs.iter().flat_map(|s| s.events().iter().copied()).collect();
        let whole = s.slice_by_time(100, 800).unwrap();
        assert_eq!(concat, whole.events());
    }
}
