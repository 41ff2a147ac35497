//! Event streams and pseudo-frame generation.
//!
//! An [`EventStream`] is a time-ordered list of polarity events from a
//! dynamic vision sensor. Streams are accumulated into [`CountFrame`]s over
//! half-open intervals `[i·Δt, (i+1)·Δt)` where `Δt = 1/F` is tied to the
//! RGB frame rate, so that every RGB frame has exactly one event frame.

mod accumulate;
mod codec;

pub use accumulate::{
    accumulate, accumulate_window, render_frame, Accumulation, AccumulationConfig, CountFrame,
    DropReport,
};
pub use codec::{
    decode_event_stream, encode_event_stream, read_events_csv, read_events_file,
    write_events_csv, write_events_file, HEADER_LEN, MAGIC, RECORD_LEN,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("bad magic: expected \"NEV1\"")]
    BadMagic,
    #[error("truncated input: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing data after {declared} records ({extra} extra bytes)")]
    TrailingData { declared: u64, extra: usize },
    #[error("corrupt record at byte offset {offset}: {reason}")]
    CorruptRecord { offset: usize, reason: String },
    #[error("timestamps decrease at event {index} ({prev} > {next})")]
    Ordering { index: usize, prev: u64, next: u64 },
    #[error("event {index} at ({x}, {y}) outside {width}x{height} sensor")]
    OutOfBounds {
        index: usize,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error("invalid accumulation config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Direction of the brightness change reported by an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Polarity {
    Off = 0,
    On = 1,
}

impl From<Polarity> for u8 {
    fn from(p: Polarity) -> u8 {
        p as u8
    }
}

impl TryFrom<u8> for Polarity {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Polarity::Off),
            1 => Ok(Polarity::On),
            other => Err(format!("polarity must be 0 or 1, got {other}")),
        }
    }
}

/// One polarity change at pixel `(x, y)`, `t` microseconds after recording start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "t_us")]
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }
}

/// Sensor-bounded, time-ordered event sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates bounds and timestamp ordering.
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self, EventError> {
        for (index, e) in events.iter().enumerate() {
            if e.x >= width || e.y >= height {
                return Err(EventError::OutOfBounds {
                    index,
                    x: e.x,
                    y: e.y,
                    width,
                    height,
                });
            }
        }
        if let Some(index) = events.windows(2).position(|w| w[0].t > w[1].t) {
            return Err(EventError::Ordering {
                index: index + 1,
                prev: events[index].t,
                next: events[index + 1].t,
            });
        }
        Ok(Self {
            width,
            height,
            events,
        })
    }

    /// Sorts by timestamp (stable) before validating bounds.
    pub fn from_unsorted(
        width: u16,
        height: u16,
        mut events: Vec<Event>,
    ) -> Result<Self, EventError> {
        events.sort_by_key(|e| e.t);
        Self::new(width, height, events)
    }

    pub fn empty(width: u16, height: u16) -> Self {
        Self {
            width,
            height,
            events: Vec::new(),
        }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
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

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Events with `start <= t < end`, found by binary search.
    pub fn slice_time(&self, start: u64, end: u64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t < start);
        let hi = self.events.partition_point(|e| e.t < end);
        &self.events[lo..hi.max(lo)]
    }

    pub fn stats(&self) -> StreamStats {
        stream_stats(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub events: u64,
    pub on: u64,
    pub off: u64,
    /// `t_last - t_first` in microseconds, 0 with fewer than two events.
    pub duration_us: u64,
    /// Events per second over `duration_us`; 0 when the duration is 0.
    pub mean_rate_hz: f64,
}

pub fn stream_stats(stream: &EventStream) -> StreamStats {
    let events = stream.events();
    let on = events.iter().filter(|e| e.p == Polarity::On).count() as u64;
    let total = events.len() as u64;
    let duration_us = match (events.first(), events.last()) {
        (Some(a), Some(b)) if events.len() >= 2 => b.t - a.t,
        _ => 0,
    };
    let mean_rate_hz = if duration_us > 0 {
        total as f64 / (duration_us as f64 * 1e-6)
    } else {
        0.0
    };
    StreamStats {
        events: total,
        on,
        off: total - on,
        duration_us,
        mean_rate_hz,
    }
}
